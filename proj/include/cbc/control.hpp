#pragma once

// Context bias control: decouple selected tokens from the attribute
// directions, keep the removed per-group residuals, and at every denoising
// step inject the mean residual of the non-dominant groups into the
// controlled tokens whenever the bias indicator deviates past a threshold.
// Injected tokens additionally get their cross-attention rescaled by a
// time-attenuated factor.

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cbc/embedding.hpp"
#include "cbc/latent_prototypes.hpp"
#include "cbc/matrix.hpp"

namespace cbc {

enum class InitMode { kBaScore, kSemanticSimilarity, kNone };

std::string_view to_string(InitMode mode);
InitMode parse_init_mode(std::string_view text);

struct CbcConfig {
  double delta_r = 0.2;
  double delta_c = 2.0;
  double tau = 0.1;
  double pi = 0.5;
  double theta = 0.1;
  std::size_t steps = 50;  // T
  std::vector<std::size_t> controlled_tokens;
  InitMode init_mode = InitMode::kBaScore;

  void validate() const;
};

struct TokenResiduals {
  std::size_t token = 0;
  std::size_t decoupled_against = 0;
  std::vector<Embedding> per_group;  // r_{i,k} for every group k
};

struct DecoupledPrompt {
  std::vector<Embedding> tokens;  // full prompt, listed tokens replaced by c*
  std::vector<TokenResiduals> residuals;
  // Listed tokens whose c* vanished (token parallel to the attribute).
  std::vector<std::size_t> fully_aligned;
  bool empty_selection = false;

  const TokenResiduals* find(std::size_t token) const;
};

// Replaces every listed token by its projection orthogonal to
// s_{target_group} and stores its residuals against all K groups.
DecoupledPrompt decouple_tokens(const PromptEmbedding& prompt,
                                const AttributeSet& attrs,
                                std::size_t target_group,
                                std::span<const std::size_t> tokens);

// Mean of r_j over all groups j != excluded_group.
Embedding mean_other_residual(std::span<const Embedding> residuals,
                              std::size_t excluded_group);
Embedding mean_other_residual(const DecoupledPrompt& decoupled,
                              std::size_t token, std::size_t excluded_group);

// delta_r * r_bar + (1 - delta_r) * c_prev
Embedding inject_step(const Embedding& c_prev, const Embedding& r_bar,
                      double delta_r);

// Multiplies the injected columns of every row by (1 - t/T) * delta_c and
// renormalises each row to sum to one.
Matrix rescale_attention(const Matrix& attention,
                         std::span<const std::size_t> injected, double delta_c,
                         std::size_t t, std::size_t total_steps);

struct InjectionRecord {
  std::size_t step = 0;
  std::size_t token = 0;
  std::size_t excluded_group = 0;  // dominant group the injection steers away from
  double delta_r = 0.0;

  friend bool operator==(const InjectionRecord&, const InjectionRecord&) = default;
};

struct ControllerState {
  CbcConfig config;
  std::shared_ptr<const PromptEmbedding> prompt;
  std::shared_ptr<const AttributeSet> attrs;

  std::size_t t = 0;
  std::vector<Embedding> tokens;  // current conditional embeddings
  std::optional<DecoupledPrompt> decoupled;
  std::vector<double> bias_indicator;
  std::size_t dominant_group = 0;
  double deviation = 0.0;
  std::vector<InjectionRecord> injection_log;
  std::vector<std::size_t> injected;  // tokens injected at least once, sorted

  std::size_t total_steps() const { return config.steps; }
};

ControllerState make_controller_state(CbcConfig config,
                                      std::shared_ptr<const PromptEmbedding> prompt,
                                      std::shared_ptr<const AttributeSet> attrs);

struct InjectionAction {
  bool injected = false;
  std::size_t step = 0;
  std::size_t excluded_group = 0;
  double deviation = 0.0;
};

struct AdvanceResult {
  ControllerState state;
  InjectionAction action;
};

// One controller step. At t = 0 `latent` must be null and the indicator comes
// from the configured init mode; for t > 0 the latent and a prototype bank
// covering step t are required.
AdvanceResult controller_advance(const ControllerState& state,
                                 const Embedding* latent,
                                 const PrototypeBank* bank);

}  // namespace cbc
