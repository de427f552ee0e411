#include "cbc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cbc {
namespace {

constexpr double kClamp = 1e-12;

double clamp_unit(double v, const char* name) {
  if (v < -kClamp || v > 1.0 + kClamp || !std::isfinite(v)) {
    throw ContractError(std::string(name) + " must lie in [0, 1]");
  }
  return std::min(1.0, std::max(0.0, v));
}

}  // namespace

void LabelBatch::validate() const {
  if (labels.empty()) throw ContractError("label batch is empty");
  if (groups < 2) throw ContractError("label batch needs K >= 2");
  for (std::size_t l : labels) {
    if (l >= groups) throw ContractError("label out of range");
  }
}

std::vector<double> LabelBatch::proportions() const {
  validate();
  std::vector<double> p(groups, 0.0);
  for (std::size_t l : labels) p[l] += 1.0;
  for (double& v : p) v /= static_cast<double>(labels.size());
  return p;
}

double fairness_discrepancy(const LabelBatch& batch) {
  const std::vector<double> p = batch.proportions();
  const double k = static_cast<double>(batch.groups);
  double l1 = 0.0;
  for (double v : p) l1 += std::abs(v - 1.0 / k);
  return l1 / (2.0 * (1.0 - 1.0 / k));
}

double alignment_fairness_score(double fd, double vqa) {
  const double fair = 1.0 - clamp_unit(fd, "fd");
  const double align = clamp_unit(vqa, "vqa");
  const double denom = fair + align;
  if (denom == 0.0) return 0.0;
  return 2.0 * fair * align / denom;
}

MetricReport make_report(const LabelBatch& batch, std::span<const double> alignment) {
  if (alignment.size() != batch.labels.size()) {
    throw ContractError("make_report: label/alignment count mismatch");
  }
  MetricReport r;
  r.n = batch.labels.size();
  r.proportions = batch.proportions();
  r.counts.assign(batch.groups, 0);
  for (std::size_t l : batch.labels) ++r.counts[l];
  r.fd = fairness_discrepancy(batch);
  double sum = 0.0;
  for (double a : alignment) sum += a;
  r.vqa = sum / static_cast<double>(alignment.size());
  r.afs = alignment_fairness_score(r.fd, r.vqa);
  return r;
}

MetricReport evaluate_records(std::span<const GenerationRecord> records,
                              const AlignmentScorer& scorer, std::size_t groups) {
  LabelBatch batch{{}, groups};
  std::vector<double> alignment;
  for (const auto& rec : records) {
    batch.labels.push_back(rec.attribute.group);
    alignment.push_back(scorer.score(rec));
  }
  return make_report(batch, alignment);
}

}  // namespace cbc
