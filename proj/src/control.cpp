#include "cbc/control.hpp"

#include <algorithm>
#include <cmath>

#include "cbc/bias_scoring.hpp"

namespace cbc {
namespace {

constexpr double kRowSumTolerance = 1e-9;
constexpr double kAlignedTolerance = 1e-12;

struct Indicator {
  std::vector<double> scores;
  Deviation deviation;
};

Indicator initial_indicator(const ControllerState& s) {
  const std::size_t groups = s.attrs->group_count();
  Indicator ind;
  switch (s.config.init_mode) {
    case InitMode::kBaScore:
      ind.scores = adherence_scores(*s.prompt, *s.attrs, s.config.tau, s.config.pi).per_group;
      break;
    case InitMode::kSemanticSimilarity: {
      ind.scores.assign(groups, 0.0);
      std::size_t used = 0;
      for (std::size_t i : s.config.controlled_tokens) {
        const Embedding& c = s.prompt->token(i);
        if (c.is_zero()) continue;
        for (std::size_t k = 0; k < groups; ++k) {
          ind.scores[k] += cosine(c, s.attrs->prototype(k));
        }
        ++used;
      }
      if (used == 0) {
        ind.scores.assign(groups, 1.0 / static_cast<double>(groups));
      } else {
        for (double& v : ind.scores) v /= static_cast<double>(used);
      }
      break;
    }
    case InitMode::kNone:
      ind.scores.assign(groups, 1.0 / static_cast<double>(groups));
      break;
  }
  ind.deviation = ba_score(ind.scores, s.config.pi);
  return ind;
}

}  // namespace

std::string_view to_string(InitMode mode) {
  switch (mode) {
    case InitMode::kBaScore: return "ba-score";
    case InitMode::kSemanticSimilarity: return "semantic-similarity";
    case InitMode::kNone: return "none";
  }
  return "unknown";
}

InitMode parse_init_mode(std::string_view text) {
  if (text == "ba-score") return InitMode::kBaScore;
  if (text == "semantic-similarity") return InitMode::kSemanticSimilarity;
  if (text == "none") return InitMode::kNone;
  throw ContractError("unknown init mode: " + std::string(text));
}

void CbcConfig::validate() const {
  if (!(delta_r >= 0.0 && delta_r <= 1.0)) throw ContractError("delta_r must lie in [0, 1]");
  if (!(delta_c > 0.0)) throw ContractError("delta_c must be > 0");
  if (!(tau > 0.0)) throw ContractError("tau must be > 0");
  if (!(theta >= 0.0 && theta <= 0.5)) throw ContractError("theta must lie in [0, 0.5]");
  if (!std::isfinite(pi)) throw ContractError("pi must be finite");
  if (steps == 0) throw ContractError("T must be >= 1");
}

const TokenResiduals* DecoupledPrompt::find(std::size_t token) const {
  for (const auto& r : residuals) {
    if (r.token == token) return &r;
  }
  return nullptr;
}

DecoupledPrompt decouple_tokens(const PromptEmbedding& prompt,
                                const AttributeSet& attrs,
                                std::size_t target_group,
                                std::span<const std::size_t> tokens) {
  if (target_group >= attrs.group_count()) {
    throw ContractError("decouple_tokens: target group out of range");
  }
  if (prompt.dim() != attrs.dim()) {
    throw ContractError("decouple_tokens: prompt/attribute dimension mismatch");
  }
  DecoupledPrompt out;
  out.tokens = prompt.tokens();
  out.empty_selection = tokens.empty();

  std::vector<std::size_t> selected(tokens.begin(), tokens.end());
  std::sort(selected.begin(), selected.end());
  selected.erase(std::unique(selected.begin(), selected.end()), selected.end());

  for (std::size_t i : selected) {
    if (i >= prompt.size()) throw ContractError("decouple_tokens: token index out of range");
    const Embedding& c = prompt.token(i);
    TokenResiduals res{i, target_group, {}};
    for (std::size_t k = 0; k < attrs.group_count(); ++k) {
      res.per_group.push_back(project_out(c, attrs.attribute(k)).residual);
    }
    Embedding c_star = subtract(c, res.per_group[target_group]);
    if (c_star.norm() <= kAlignedTolerance * std::max(c.norm(), 1.0)) {
      out.fully_aligned.push_back(i);
    }
    out.tokens[i] = std::move(c_star);
    out.residuals.push_back(std::move(res));
  }
  return out;
}

Embedding mean_other_residual(std::span<const Embedding> residuals,
                              std::size_t excluded_group) {
  if (residuals.size() < 2) throw ContractError("mean_other_residual: need K >= 2");
  if (excluded_group >= residuals.size()) {
    throw ContractError("mean_other_residual: excluded group out of range");
  }
  std::vector<double> sum(residuals.front().dim(), 0.0);
  for (std::size_t j = 0; j < residuals.size(); ++j) {
    if (j == excluded_group) continue;
    for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += residuals[j][d];
  }
  const double inv = 1.0 / static_cast<double>(residuals.size() - 1);
  for (double& v : sum) v *= inv;
  return Embedding(std::move(sum), residuals.front().label());
}

Embedding mean_other_residual(const DecoupledPrompt& decoupled,
                              std::size_t token, std::size_t excluded_group) {
  const TokenResiduals* res = decoupled.find(token);
  if (res == nullptr) {
    throw ContractError("mean_other_residual: token " + std::to_string(token) +
                        " was not decoupled");
  }
  return mean_other_residual(res->per_group, excluded_group);
}

Embedding inject_step(const Embedding& c_prev, const Embedding& r_bar,
                      double delta_r) {
  if (!(delta_r >= 0.0 && delta_r <= 1.0)) {
    throw ContractError("inject_step: delta_r must lie in [0, 1]");
  }
  return combine(r_bar, delta_r, c_prev, 1.0 - delta_r).with_label(c_prev.label());
}

Matrix rescale_attention(const Matrix& attention,
                         std::span<const std::size_t> injected, double delta_c,
                         std::size_t t, std::size_t total_steps) {
  if (!(delta_c > 0.0)) throw ContractError("rescale_attention: delta_c must be > 0");
  if (total_steps == 0 || t > total_steps) {
    throw ContractError("rescale_attention: step outside [0, T]");
  }
  for (std::size_t col : injected) {
    if (col >= attention.cols()) throw ContractError("rescale_attention: column out of range");
  }
  const double factor =
      (1.0 - static_cast<double>(t) / static_cast<double>(total_steps)) * delta_c;

  Matrix out = attention;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    double before = 0.0;
    for (double v : row) before += v;
    if (std::abs(before - 1.0) > kRowSumTolerance) {
      throw ContractError("rescale_attention: row " + std::to_string(r) +
                          " is not stochastic");
    }
    for (std::size_t col : injected) row[col] *= factor;
    double total = 0.0;
    for (double v : row) total += v;
    if (!(total > 0.0)) throw ContractError("attention degenerate");
    for (double& v : row) v /= total;
  }
  return out;
}

ControllerState make_controller_state(CbcConfig config,
                                      std::shared_ptr<const PromptEmbedding> prompt,
                                      std::shared_ptr<const AttributeSet> attrs) {
  config.validate();
  if (!prompt || !attrs) throw ContractError("controller: prompt and attributes required");
  if (prompt->dim() != attrs->dim()) {
    throw ContractError("controller: prompt/attribute dimension mismatch");
  }
  std::sort(config.controlled_tokens.begin(), config.controlled_tokens.end());
  config.controlled_tokens.erase(
      std::unique(config.controlled_tokens.begin(), config.controlled_tokens.end()),
      config.controlled_tokens.end());
  for (std::size_t i : config.controlled_tokens) {
    if (i >= prompt->size()) throw ContractError("controlled token index out of range");
  }
  ControllerState s;
  s.config = std::move(config);
  s.tokens = prompt->tokens();
  s.bias_indicator.assign(attrs->group_count(), 1.0 / static_cast<double>(attrs->group_count()));
  s.prompt = std::move(prompt);
  s.attrs = std::move(attrs);
  return s;
}

AdvanceResult controller_advance(const ControllerState& state,
                                 const Embedding* latent,
                                 const PrototypeBank* bank) {
  if (state.t >= state.total_steps()) {
    throw ContractError("controller advanced past T = " + std::to_string(state.total_steps()));
  }
  AdvanceResult out{state, {}};
  ControllerState& next = out.state;
  out.action.step = state.t;

  if (state.t == 0) {
    if (latent != nullptr) throw ContractError("controller: no latent exists at t = 0");
    const Indicator ind = initial_indicator(state);
    next.bias_indicator = ind.scores;
    next.dominant_group = ind.deviation.dominant;
    next.deviation = ind.deviation.score;
    next.decoupled = decouple_tokens(*state.prompt, *state.attrs, next.dominant_group,
                                     state.config.controlled_tokens);
    next.tokens = next.decoupled->tokens;
  } else {
    if (latent == nullptr) throw ContractError("controller: latent required for t > 0");
    if (bank == nullptr || !bank->has_step(state.t)) {
      throw ContractError("missing latent prototypes for step " + std::to_string(state.t));
    }
    if (bank->groups() != state.attrs->group_count()) {
      throw ContractError("controller: prototype bank group count mismatch");
    }
    const LatentDeviation dev = latent_deviation(bank->project(*latent), bank->step(state.t),
                                                 state.config.tau, state.config.pi);
    next.bias_indicator = dev.scores;
    next.dominant_group = dev.dominant_group;
    next.deviation = dev.deviation;
  }

  out.action.excluded_group = next.dominant_group;
  out.action.deviation = next.deviation;
  if (next.deviation > state.config.theta && next.decoupled &&
      !next.decoupled->residuals.empty()) {
    for (const auto& res : next.decoupled->residuals) {
      const Embedding r_bar = mean_other_residual(res.per_group, next.dominant_group);
      next.tokens[res.token] = inject_step(next.tokens[res.token], r_bar, state.config.delta_r);
      next.injection_log.push_back(
          {state.t, res.token, next.dominant_group, state.config.delta_r});
      if (!std::binary_search(next.injected.begin(), next.injected.end(), res.token)) {
        next.injected.insert(
            std::upper_bound(next.injected.begin(), next.injected.end(), res.token), res.token);
      }
    }
    out.action.injected = true;
  }
  ++next.t;
  return out;
}

}  // namespace cbc
