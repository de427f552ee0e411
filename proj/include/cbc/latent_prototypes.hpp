#pragma once

// Per-timestep latent prototypes h_k(t): class centres of labelled latents
// recorded at each denoising step, optionally after a learned linear
// projection trained with a supervised contrastive loss.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbc/embedding.hpp"
#include "cbc/fixture.hpp"
#include "cbc/matrix.hpp"

namespace cbc {

struct LatentSample {
  Embedding latent;
  std::size_t group = 0;
  std::size_t step = 0;
  std::uint64_t id = 0;  // defines summation order
};

class PrototypeBank {
 public:
  // `prototypes` is indexed [step * groups + group].
  PrototypeBank(std::size_t groups, std::size_t last_step,
                std::vector<Embedding> prototypes,
                std::optional<Matrix> projection = std::nullopt);

  std::size_t groups() const { return groups_; }
  std::size_t last_step() const { return last_step_; }
  std::size_t dim() const { return prototypes_.front().dim(); }
  bool has_step(std::size_t t) const { return t <= last_step_; }

  const Embedding& at(std::size_t group, std::size_t t) const;
  // All K prototypes for step t.
  std::span<const Embedding> step(std::size_t t) const;

  const std::optional<Matrix>& projection() const { return projection_; }
  // Applies the projection (if any) to a raw latent.
  Embedding project(const Embedding& latent) const;

 private:
  std::size_t groups_;
  std::size_t last_step_;
  std::vector<Embedding> prototypes_;
  std::optional<Matrix> projection_;
};

// Mean of the (optionally projected) latents of each (group, step) cell.
// Group count and last step are inferred from the samples; every cell of the
// resulting grid must be populated.
PrototypeBank compute_prototypes(std::span<const LatentSample> samples,
                                 const std::optional<Matrix>& projection = std::nullopt);

// Fixture rows labelled "proto:k=<k>:t=<t>" with role "prototype".
Fixture bank_to_fixture(const PrototypeBank& bank);
PrototypeBank bank_from_fixture(const Fixture& fixture);

// Latent sample rows are labelled "k=<k>:t=<t>" (any role).
std::vector<LatentSample> samples_from_fixture(const Fixture& fixture);
Fixture samples_to_fixture(std::span<const LatentSample> samples);

struct ContrastiveConfig {
  std::size_t projection_dim = 8;
  double temperature = 0.5;
  double learning_rate = 0.1;
  std::size_t iterations = 200;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;

  void validate() const;
};

struct LossAndGradient {
  double loss = 0.0;
  Matrix gradient;          // same shape as the projection
  std::size_t anchors = 0;  // anchors with at least one positive
};

// Supervised normalised-temperature contrastive loss of z_i = Wx_i/|Wx_i|:
//   L = mean over anchors i of
//       -mean_{p in P(i)} log( exp(z_i.z_p/T) / sum_{a != i} exp(z_i.z_a/T) )
// where P(i) are the other samples sharing i's group. A batch with fewer than
// two groups has no defined loss and returns anchors == 0.
LossAndGradient contrastive_loss(const Matrix& projection,
                                 std::span<const LatentSample> batch,
                                 double temperature);

Matrix initial_projection(std::size_t input_dim, const ContrastiveConfig& cfg);

struct TrainResult {
  Matrix projection;
  std::vector<double> loss_curve;  // batch loss before each applied step
  std::size_t skipped_batches = 0;
  std::vector<std::string> warnings;
};

// Deterministic minibatch SGD from initial_projection(). Each iteration draws
// the next batch of a per-epoch shuffle; single-group batches are skipped.
TrainResult train_contrastive(std::span<const LatentSample> samples,
                              const ContrastiveConfig& cfg);

struct GradCheckResult {
  bool has_gradient = false;
  double max_relative_error = 0.0;
  std::size_t parameters_checked = 0;
};

// Compares the analytic gradient (times `gradient_scale`, 1 for a faithful
// check) against central finite differences with step 1e-5 on a seeded random
// subset of at least 20 parameters.
GradCheckResult grad_check(const Matrix& projection,
                           std::span<const LatentSample> batch,
                           double temperature, std::uint64_t seed = 0,
                           double gradient_scale = 1.0);

// Fraction of `test` samples whose nearest (cosine) class centre, computed
// from projected `train` samples, matches their label.
double nearest_prototype_accuracy(const Matrix& projection,
                                  std::span<const LatentSample> train,
                                  std::span<const LatentSample> test);

}  // namespace cbc
