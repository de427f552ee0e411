#include "cbc/latent_prototypes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace cbc {
namespace {

struct CellTag {
  std::size_t group;
  std::size_t step;
};

// Parses "...k=<k>:t=<t>..." labels.
CellTag parse_cell_label(const std::string& label) {
  const auto k = label.find("k=");
  const auto t = label.find("t=");
  if (k == std::string::npos || t == std::string::npos) {
    throw FixtureError("label lacks k=/t= fields: " + label);
  }
  try {
    return {std::stoul(label.substr(k + 2)), std::stoul(label.substr(t + 2))};
  } catch (const std::exception&) {
    throw FixtureError("unparseable k=/t= fields: " + label);
  }
}

std::string cell_label(const char* prefix, std::size_t k, std::size_t t) {
  return std::string(prefix) + "k=" + std::to_string(k) + ":t=" + std::to_string(t);
}

bool sample_less(const LatentSample* a, const LatentSample* b) {
  if (a->id != b->id) return a->id < b->id;
  return std::lexicographical_compare(a->latent.values().begin(), a->latent.values().end(),
                                      b->latent.values().begin(), b->latent.values().end());
}

std::size_t group_count(std::span<const LatentSample> batch) {
  std::set<std::size_t> groups;
  for (const auto& s : batch) groups.insert(s.group);
  return groups.size();
}

}  // namespace

PrototypeBank::PrototypeBank(std::size_t groups, std::size_t last_step,
                             std::vector<Embedding> prototypes,
                             std::optional<Matrix> projection)
    : groups_(groups),
      last_step_(last_step),
      prototypes_(std::move(prototypes)),
      projection_(std::move(projection)) {
  if (groups_ < 2) throw ContractError("prototype bank needs K >= 2 groups");
  if (prototypes_.size() != groups_ * (last_step_ + 1)) {
    throw ContractError("prototype bank: expected one prototype per (group, step)");
  }
  const std::size_t d = prototypes_.front().dim();
  for (const auto& p : prototypes_) {
    if (p.dim() != d) throw ContractError("prototype bank: dimension mismatch");
    if (p.is_zero()) throw ContractError("prototype bank: zero prototype");
  }
  if (projection_ && projection_->rows() != d) {
    throw ContractError("prototype bank: projection output dim != prototype dim");
  }
}

const Embedding& PrototypeBank::at(std::size_t group, std::size_t t) const {
  if (group >= groups_) throw ContractError("prototype bank: group out of range");
  if (t > last_step_) {
    throw ContractError("missing latent prototypes for step " + std::to_string(t));
  }
  return prototypes_[t * groups_ + group];
}

std::span<const Embedding> PrototypeBank::step(std::size_t t) const {
  if (t > last_step_) {
    throw ContractError("missing latent prototypes for step " + std::to_string(t));
  }
  return {prototypes_.data() + t * groups_, groups_};
}

Embedding PrototypeBank::project(const Embedding& latent) const {
  return projection_ ? apply(*projection_, latent) : latent;
}

PrototypeBank compute_prototypes(std::span<const LatentSample> samples,
                                 const std::optional<Matrix>& projection) {
  if (samples.empty()) throw ContractError("compute_prototypes: no samples");
  const std::size_t d = samples.front().latent.dim();
  std::size_t groups = 0;
  std::size_t last_step = 0;
  std::vector<const LatentSample*> order;
  order.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.latent.dim() != d) throw ContractError("compute_prototypes: dimension mismatch");
    groups = std::max(groups, s.group + 1);
    last_step = std::max(last_step, s.step);
    order.push_back(&s);
  }
  groups = std::max<std::size_t>(groups, 2);
  std::sort(order.begin(), order.end(), sample_less);

  const std::size_t out_dim = projection ? projection->rows() : d;
  std::vector<std::vector<double>> sums(groups * (last_step + 1),
                                        std::vector<double>(out_dim, 0.0));
  std::vector<std::size_t> counts(sums.size(), 0);
  for (const LatentSample* s : order) {
    const Embedding v = projection ? apply(*projection, s->latent) : s->latent;
    const std::size_t cell = s->step * groups + s->group;
    for (std::size_t i = 0; i < out_dim; ++i) sums[cell][i] += v[i];
    ++counts[cell];
  }

  std::vector<std::string> missing;
  for (std::size_t cell = 0; cell < sums.size(); ++cell) {
    if (counts[cell] == 0) {
      missing.push_back("(k=" + std::to_string(cell % groups) +
                        ",t=" + std::to_string(cell / groups) + ")");
    }
  }
  if (!missing.empty()) {
    std::string msg = "compute_prototypes: missing cells";
    for (const auto& m : missing) msg += " " + m;
    throw ContractError(msg);
  }

  std::vector<Embedding> protos;
  protos.reserve(sums.size());
  for (std::size_t cell = 0; cell < sums.size(); ++cell) {
    for (double& v : sums[cell]) v /= static_cast<double>(counts[cell]);
    protos.emplace_back(std::move(sums[cell]),
                        cell_label("proto:", cell % groups, cell / groups));
  }
  return PrototypeBank(groups, last_step, std::move(protos), projection);
}

Fixture bank_to_fixture(const PrototypeBank& bank) {
  Fixture f;
  f.dim = bank.dim();
  for (std::size_t t = 0; t <= bank.last_step(); ++t) {
    for (std::size_t k = 0; k < bank.groups(); ++k) {
      f.rows.push_back(to_row(bank.at(k, t).with_label(cell_label("proto:", k, t)),
                              "prototype"));
    }
  }
  return f;
}

PrototypeBank bank_from_fixture(const Fixture& fixture) {
  std::vector<LatentSample> cells;
  std::uint64_t id = 0;
  for (const auto& row : fixture.rows) {
    if (row.role != "prototype") continue;
    const CellTag tag = parse_cell_label(row.label);
    cells.push_back({to_embedding(row), tag.group, tag.step, id++});
  }
  return compute_prototypes(cells);
}

std::vector<LatentSample> samples_from_fixture(const Fixture& fixture) {
  std::vector<LatentSample> out;
  out.reserve(fixture.rows.size());
  std::uint64_t id = 0;
  for (const auto& row : fixture.rows) {
    const CellTag tag = parse_cell_label(row.label);
    out.push_back({to_embedding(row), tag.group, tag.step, id++});
  }
  return out;
}

Fixture samples_to_fixture(std::span<const LatentSample> samples) {
  Fixture f;
  if (samples.empty()) throw ContractError("samples_to_fixture: no samples");
  f.dim = samples.front().latent.dim();
  for (const auto& s : samples) {
    f.rows.push_back(to_row(s.latent.with_label(cell_label("", s.group, s.step)), "latent"));
  }
  return f;
}

void ContrastiveConfig::validate() const {
  if (projection_dim == 0 || !(temperature > 0.0) || learning_rate < 0.0 ||
      iterations == 0 || batch_size < 2) {
    throw ContractError("contrastive config: parameters must be positive");
  }
}

LossAndGradient contrastive_loss(const Matrix& projection,
                                 std::span<const LatentSample> batch,
                                 double temperature) {
  LossAndGradient out{0.0, Matrix(projection.rows(), projection.cols()), 0};
  if (batch.size() < 2 || group_count(batch) < 2) return out;

  const std::size_t n = batch.size();
  const std::size_t p = projection.rows();
  std::vector<Embedding> z;
  std::vector<double> norms;
  z.reserve(n);
  for (const auto& s : batch) {
    Embedding y = apply(projection, s.latent);
    const double ny = y.norm();
    if (ny == 0.0) throw ContractError("contrastive_loss: projection maps a sample to zero");
    norms.push_back(ny);
    z.push_back(scale(y, 1.0 / ny));
  }

  std::vector<std::size_t> positives(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && batch[i].group == batch[j].group) ++positives[i];
    }
  }
  for (std::size_t i = 0; i < n; ++i) out.anchors += positives[i] > 0 ? 1 : 0;
  if (out.anchors == 0) return out;
  const double inv_anchors = 1.0 / static_cast<double>(out.anchors);

  std::vector<std::vector<double>> grad_z(n, std::vector<double>(p, 0.0));
  std::vector<double> sims(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (positives[i] == 0) continue;
    double shift = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      sims[j] = j == i ? 0.0 : dot(z[i], z[j]) / temperature;
      if (j != i) shift = std::max(shift, sims[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) total += std::exp(sims[j] - shift);
    }
    const double lse = shift + std::log(total);
    const double inv_pos = 1.0 / static_cast<double>(positives[i]);

    double anchor_loss = lse;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const bool positive = batch[j].group == batch[i].group;
      if (positive) anchor_loss -= inv_pos * sims[j];
      const double coeff =
          inv_anchors * (std::exp(sims[j] - lse) - (positive ? inv_pos : 0.0)) / temperature;
      for (std::size_t r = 0; r < p; ++r) {
        grad_z[i][r] += coeff * z[j][r];
        grad_z[j][r] += coeff * z[i][r];
      }
    }
    out.loss += inv_anchors * anchor_loss;
  }

  // Back through normalisation and the linear map.
  for (std::size_t i = 0; i < n; ++i) {
    double radial = 0.0;
    for (std::size_t r = 0; r < p; ++r) radial += z[i][r] * grad_z[i][r];
    const Embedding& x = batch[i].latent;
    for (std::size_t r = 0; r < p; ++r) {
      const double gy = (grad_z[i][r] - z[i][r] * radial) / norms[i];
      for (std::size_t c = 0; c < x.dim(); ++c) out.gradient(r, c) += gy * x[c];
    }
  }
  return out;
}

Matrix initial_projection(std::size_t input_dim, const ContrastiveConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(input_dim)));
  Matrix w(cfg.projection_dim, input_dim);
  for (double& v : w.data()) v = normal(rng);
  return w;
}

TrainResult train_contrastive(std::span<const LatentSample> samples,
                              const ContrastiveConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw ContractError("train_contrastive: no samples");
  TrainResult result{initial_projection(samples.front().latent.dim(), cfg), {}, 0, {}};

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  std::vector<LatentSample> batch;

  for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
    if (cursor >= order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::size_t end = std::min(order.size(), cursor + cfg.batch_size);
    batch.clear();
    for (std::size_t i = cursor; i < end; ++i) batch.push_back(samples[order[i]]);
    cursor = end;

    const LossAndGradient lg = contrastive_loss(result.projection, batch, cfg.temperature);
    if (lg.anchors == 0) {
      ++result.skipped_batches;
      result.warnings.push_back("iteration " + std::to_string(iter) +
                                ": batch has a single group, skipped");
      continue;
    }
    result.loss_curve.push_back(lg.loss);
    auto& w = result.projection.data();
    const auto& g = lg.gradient.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.learning_rate * g[i];
  }
  return result;
}

GradCheckResult grad_check(const Matrix& projection,
                           std::span<const LatentSample> batch,
                           double temperature, std::uint64_t seed,
                           double gradient_scale) {
  constexpr double kStep = 1e-5;
  GradCheckResult result;
  const LossAndGradient base = contrastive_loss(projection, batch, temperature);
  if (base.anchors == 0) return result;
  result.has_gradient = true;

  std::vector<std::size_t> params(projection.size());
  std::iota(params.begin(), params.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(params.begin(), params.end(), rng);
  params.resize(std::min<std::size_t>(params.size(), 32));

  Matrix probe = projection;
  for (std::size_t idx : params) {
    const double original = probe.data()[idx];
    probe.data()[idx] = original + kStep;
    const double up = contrastive_loss(probe, batch, temperature).loss;
    probe.data()[idx] = original - kStep;
    const double down = contrastive_loss(probe, batch, temperature).loss;
    probe.data()[idx] = original;

    const double fd = (up - down) / (2.0 * kStep);
    const double analytic = gradient_scale * base.gradient.data()[idx];
    const double rel = std::abs(analytic - fd) / std::max(std::abs(fd), 1e-8);
    result.max_relative_error = std::max(result.max_relative_error, rel);
    ++result.parameters_checked;
  }
  return result;
}

double nearest_prototype_accuracy(const Matrix& projection,
                                  std::span<const LatentSample> train,
                                  std::span<const LatentSample> test) {
  if (train.empty() || test.empty()) throw ContractError("accuracy: empty sample set");
  std::size_t groups = 0;
  for (const auto& s : train) groups = std::max(groups, s.group + 1);
  std::vector<std::vector<double>> sums(groups, std::vector<double>(projection.rows(), 0.0));
  for (const auto& s : train) {
    const Embedding z = normalized(apply(projection, s.latent));
    for (std::size_t r = 0; r < z.dim(); ++r) sums[s.group][r] += z[r];
  }
  std::vector<std::optional<Embedding>> centres(groups);
  for (std::size_t k = 0; k < groups; ++k) {
    Embedding c(std::move(sums[k]));
    if (!c.is_zero()) centres[k] = std::move(c);
  }

  std::size_t correct = 0;
  for (const auto& s : test) {
    const Embedding z = apply(projection, s.latent);
    std::size_t best = 0;
    double best_cos = -2.0;
    for (std::size_t k = 0; k < groups; ++k) {
      if (!centres[k]) continue;
      const double c = cosine(z, *centres[k]);
      if (c > best_cos) {
        best_cos = c;
        best = k;
      }
    }
    correct += best == s.group ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace cbc
