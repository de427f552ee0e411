#pragma once

// A small denoising simulator for desk-scale checks of the controller.
//
// The latent and token spaces coincide (dimension d). Each step mixes the
// prompt tokens through one row of softmax cross-attention,
//     z_{t-1} = (1 - alpha) z_t + alpha * sum_i A_i c_i + sigma_t * eps,
// with A = softmax(<z_t, c_i> / sqrt(d)). Basis axis 0 is the attribute
// direction g (group 0 on its positive side), axis 1 the semantic target u
// and axis 2 a direction shared by all tokens, mimicking the anisotropy of
// real text encoders.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cbc/control.hpp"
#include "cbc/embedding.hpp"
#include "cbc/latent_prototypes.hpp"

namespace cbc {

struct ToyWorldParams {
  std::size_t dim = 16;
  std::size_t steps = 50;
  double alpha = 0.05;
  double sigma_max = 0.2;         // sigma_t = sigma_max * t / T
  double token_scale = 2.0;       // norm of every constructed token
  double common_weight = 0.8;     // weight of the shared direction in tokens
  double private_weight = 0.3;    // weight of the token's own random direction
  double attribute_strength = 0.4;  // s_k = normalise(common +/- strength * g)
  std::size_t calibration_runs = 200;  // per group, for the latent bank
  std::vector<std::string> group_names{"female", "male"};

  void validate() const;
};

class ToyWorld {
 public:
  explicit ToyWorld(ToyWorldParams params);

  const ToyWorldParams& params() const { return params_; }
  std::size_t dim() const { return params_.dim; }
  std::size_t steps() const { return params_.steps; }
  double alpha() const { return params_.alpha; }
  double sigma(std::size_t t) const { return sigma_.at(t); }
  std::span<const double> sigma_schedule() const { return sigma_; }

  const Embedding& attribute_direction() const { return g_; }
  const Embedding& semantic_target() const { return u_; }
  const Embedding& common_direction() const { return h_; }

  // Token of norm token_scale with cos(token, g) == gender_cos exactly. The
  // rest of its mass is split between u (semantic_weight), the common
  // direction and a private direction seeded from the label.
  Embedding make_token(const std::string& label, double gender_cos,
                       double semantic_weight) const;

  // Two-group attribute set: s_0 leans to +g, s_1 to -g; p_k = s_k.
  AttributeSet attributes() const;

 private:
  ToyWorldParams params_;
  std::vector<double> sigma_;
  Embedding g_;
  Embedding u_;
  Embedding h_;
};

struct AttentionControl {
  std::span<const std::size_t> injected;
  double delta_c = 1.0;
  std::size_t step = 0;
  std::size_t total_steps = 1;
};

// One step from diffusion index t (>= 1) to t - 1.
Embedding denoise_step(const Embedding& z, std::span<const Embedding> tokens,
                       const ToyWorld& world, std::size_t t, std::mt19937_64& rng,
                       const AttentionControl* control = nullptr);

struct ControlSetup {
  CbcConfig config;
  std::shared_ptr<const AttributeSet> attrs;
  std::shared_ptr<const PrototypeBank> bank;
};

struct Classification {
  std::size_t group = 0;
  double confidence = 0.0;
  bool ambiguous = false;
};

struct GenerationRecord {
  std::uint64_t seed = 0;
  std::vector<Embedding> trajectory;  // [0] = z_T, [n] after n steps, back() = z_0
  Classification attribute;
  double alignment = 0.0;
  std::optional<CbcConfig> config;    // set when the controller ran
  std::vector<InjectionRecord> injection_log;

  const Embedding& final_latent() const { return trajectory.back(); }
};

Classification classify_attribute(const Embedding& z0, const ToyWorld& world);
double toy_alignment(const Embedding& z0, const ToyWorld& world);

GenerationRecord generate(const PromptEmbedding& prompt, const ToyWorld& world,
                          std::uint64_t seed, const ControlSetup* control = nullptr);

// Latent prototypes per (group, step) from uncontrolled runs of one
// calibration prompt per group: a filler, a neutral subject and the group's
// attribute token.
PrototypeBank calibrate_latent_bank(const ToyWorld& world, std::uint64_t base_seed);

// Trajectory latents of the calibration runs, labelled by group and step.
std::vector<LatentSample> calibration_samples(const ToyWorld& world,
                                              std::uint64_t base_seed);

}  // namespace cbc
