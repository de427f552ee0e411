#pragma once

// Fairness discrepancy, alignment-aware fairness score and the scorer
// interface used to rate text alignment of a generation.

#include <cstddef>
#include <span>
#include <vector>

#include "cbc/toy_diffusion.hpp"

namespace cbc {

struct LabelBatch {
  std::vector<std::size_t> labels;
  std::size_t groups = 2;

  void validate() const;
  std::vector<double> proportions() const;
};

// Normalised L1 distance of the empirical group distribution to uniform:
// |p - u|_1 / (2 (1 - 1/K)). For K = 2 this is |p_0 - p_1|.
double fairness_discrepancy(const LabelBatch& batch);

// Harmonic mean of (1 - fd) and vqa; 0 when both are 0.
double alignment_fairness_score(double fd, double vqa);

class AlignmentScorer {
 public:
  virtual ~AlignmentScorer() = default;
  // Pure and deterministic per record; result in [0, 1].
  virtual double score(const GenerationRecord& record) const = 0;
};

class ToyAlignmentScorer final : public AlignmentScorer {
 public:
  explicit ToyAlignmentScorer(const ToyWorld& world) : world_(&world) {}
  double score(const GenerationRecord& record) const override {
    return toy_alignment(record.final_latent(), *world_);
  }

 private:
  const ToyWorld* world_;
};

struct MetricReport {
  double fd = 0.0;
  double vqa = 0.0;
  double afs = 0.0;
  std::size_t n = 0;
  std::vector<std::size_t> counts;
  std::vector<double> proportions;
};

// Report from already-scored outcomes.
MetricReport make_report(const LabelBatch& batch, std::span<const double> alignment);

MetricReport evaluate_records(std::span<const GenerationRecord> records,
                              const AlignmentScorer& scorer, std::size_t groups = 2);

}  // namespace cbc
