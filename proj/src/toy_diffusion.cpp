#include "cbc/toy_diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cbc {
namespace {

Embedding axis(std::size_t dim, std::size_t i, const char* label) {
  std::vector<double> v(dim, 0.0);
  v[i] = 1.0;
  return Embedding(std::move(v), label);
}

// FNV-1a, stable across platforms and runs.
std::uint64_t label_hash(const std::string& label) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

void ToyWorldParams::validate() const {
  if (dim < 4) throw ContractError("toy world: dim must be >= 4");
  if (steps == 0) throw ContractError("toy world: steps must be >= 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("toy world: alpha must lie in [0, 1]");
  if (!(sigma_max >= 0.0)) throw ContractError("toy world: sigma_max must be >= 0");
  if (!(token_scale > 0.0)) throw ContractError("toy world: token_scale must be > 0");
  if (common_weight < 0.0 || private_weight < 0.0 || attribute_strength <= 0.0) {
    throw ContractError("toy world: token weights must be non-negative");
  }
  if (group_names.size() != 2) throw ContractError("toy world models exactly two groups");
}

ToyWorld::ToyWorld(ToyWorldParams params)
    : params_(std::move(params)),
      g_(axis(std::max<std::size_t>(params_.dim, 1), 0, "g")),
      u_(axis(std::max<std::size_t>(params_.dim, 2), 1, "u")),
      h_(axis(std::max<std::size_t>(params_.dim, 3), 2, "common")) {
  params_.validate();
  sigma_.resize(params_.steps + 1);
  for (std::size_t t = 0; t <= params_.steps; ++t) {
    sigma_[t] = params_.sigma_max * static_cast<double>(t) / static_cast<double>(params_.steps);
  }
}

Embedding ToyWorld::make_token(const std::string& label, double gender_cos,
                               double semantic_weight) const {
  if (!(gender_cos >= -1.0 && gender_cos <= 1.0)) {
    throw ContractError("make_token: gender_cos must lie in [-1, 1]");
  }
  std::mt19937_64 rng(label_hash(label));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> priv(params_.dim, 0.0);
  for (std::size_t i = 3; i < params_.dim; ++i) priv[i] = normal(rng);
  Embedding rest = combine(u_, semantic_weight, h_, params_.common_weight);
  rest = combine(rest, 1.0, normalized(Embedding(std::move(priv))), params_.private_weight);
  rest = normalized(rest);
  const double orth = std::sqrt(std::max(0.0, 1.0 - gender_cos * gender_cos));
  Embedding token = combine(g_, gender_cos, rest, orth);
  return scale(token, params_.token_scale).with_label(label);
}

AttributeSet ToyWorld::attributes() const {
  const double beta = params_.attribute_strength;
  std::vector<Embedding> s;
  s.push_back(scale(normalized(combine(h_, 1.0, g_, beta)), params_.token_scale)
                  .with_label(params_.group_names[0]));
  s.push_back(scale(normalized(combine(h_, 1.0, g_, -beta)), params_.token_scale)
                  .with_label(params_.group_names[1]));
  return AttributeSet(params_.group_names, s, s);
}

Embedding denoise_step(const Embedding& z, std::span<const Embedding> tokens,
                       const ToyWorld& world, std::size_t t, std::mt19937_64& rng,
                       const AttentionControl* control) {
  if (t == 0 || t > world.steps()) throw ContractError("denoise_step: t must lie in [1, T]");
  if (tokens.empty()) throw ContractError("denoise_step: no tokens");
  const std::size_t d = world.dim();
  if (z.dim() != d) throw ContractError("denoise_step: latent dimension mismatch");

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix attention(1, tokens.size());
  double shift = -INFINITY;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    attention(0, i) = dot(z, tokens[i]) * inv_sqrt_d;
    shift = std::max(shift, attention(0, i));
  }
  double total = 0.0;
  for (double& a : attention.data()) {
    a = std::exp(a - shift);
    total += a;
  }
  for (double& a : attention.data()) a /= total;
  if (control != nullptr && !control->injected.empty()) {
    attention = rescale_attention(attention, control->injected, control->delta_c,
                                  control->step, control->total_steps);
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  const double alpha = world.alpha();
  const double sigma = world.sigma(t);
  std::vector<double> next(d);
  for (std::size_t j = 0; j < d; ++j) {
    double mix = 0.0;
    for (std::size_t i = 0; i < tokens.size(); ++i) mix += attention(0, i) * tokens[i][j];
    next[j] = (1.0 - alpha) * z[j] + alpha * mix;
  }
  for (std::size_t j = 0; j < d; ++j) {
    next[j] += sigma * normal(rng);
    if (!std::isfinite(next[j])) {
      throw std::runtime_error("non-finite latent at diffusion step " + std::to_string(t));
    }
  }
  return Embedding(std::move(next));
}

Classification classify_attribute(const Embedding& z0, const ToyWorld& world) {
  if (z0.is_zero()) return {0, 0.0, true};
  const double c = cosine(z0, world.attribute_direction());
  return {c >= 0.0 ? std::size_t{0} : std::size_t{1}, std::abs(c), std::abs(c) < 1e-12};
}

double toy_alignment(const Embedding& z0, const ToyWorld& world) {
  if (z0.is_zero()) return 0.5;
  return (cosine(z0, world.semantic_target()) + 1.0) / 2.0;
}

GenerationRecord generate(const PromptEmbedding& prompt, const ToyWorld& world,
                          std::uint64_t seed, const ControlSetup* control) {
  if (prompt.dim() != world.dim()) throw ContractError("generate: prompt/world dimension mismatch");
  const std::size_t T = world.steps();

  GenerationRecord rec;
  rec.seed = seed;
  rec.trajectory.reserve(T + 1);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> init(world.dim());
  for (double& v : init) v = normal(rng);
  rec.trajectory.emplace_back(std::move(init));

  std::optional<ControllerState> state;
  if (control != nullptr) {
    if (control->config.steps != T) {
      throw ContractError("generate: controller T differs from world steps");
    }
    state = make_controller_state(control->config,
                                  std::make_shared<const PromptEmbedding>(prompt),
                                  control->attrs);
    rec.config = state->config;
  }

  for (std::size_t n = 0; n < T; ++n) {
    const Embedding& z = rec.trajectory.back();
    if (state) {
      state = controller_advance(*state, n == 0 ? nullptr : &z, control->bank.get()).state;
      const AttentionControl ac{state->injected, state->config.delta_c, n, T};
      rec.trajectory.push_back(denoise_step(z, state->tokens, world, T - n, rng, &ac));
    } else {
      rec.trajectory.push_back(denoise_step(z, prompt.tokens(), world, T - n, rng));
    }
  }

  if (state) rec.injection_log = state->injection_log;
  rec.attribute = classify_attribute(rec.final_latent(), world);
  rec.alignment = toy_alignment(rec.final_latent(), world);
  return rec;
}

std::vector<LatentSample> calibration_samples(const ToyWorld& world,
                                              std::uint64_t base_seed) {
  const AttributeSet attrs = world.attributes();
  const Embedding filler = world.make_token("a photo of a", 0.0, 0.1);
  const Embedding subject = world.make_token("person", 0.0, 1.0);

  std::vector<LatentSample> samples;
  const std::size_t runs = world.params().calibration_runs;
  samples.reserve(2 * runs * (world.steps() + 1));
  std::uint64_t id = 0;
  for (std::size_t j = 0; j < 2 * runs; ++j) {
    const std::size_t group = j % 2;
    PromptEmbedding prompt({filler, subject, attrs.attribute(group)}, 1, {2});
    const GenerationRecord rec = generate(prompt, world, base_seed + j);
    for (std::size_t n = 0; n < rec.trajectory.size(); ++n) {
      samples.push_back({rec.trajectory[n], group, n, id++});
    }
  }
  return samples;
}

PrototypeBank calibrate_latent_bank(const ToyWorld& world, std::uint64_t base_seed) {
  const auto samples = calibration_samples(world, base_seed);
  return compute_prototypes(samples);
}

}  // namespace cbc
