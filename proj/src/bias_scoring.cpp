#include "cbc/bias_scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cbc {

double adherence_from_similarities(std::span<const double> main_similarity,
                                   std::span<const double> prototype_similarity,
                                   std::size_t main_position, double tau) {
  if (!(tau > 0.0)) throw ContractError("adherence: tau must be > 0");
  if (main_similarity.size() != prototype_similarity.size() ||
      main_position >= main_similarity.size()) {
    throw ContractError("adherence: similarity lists do not match");
  }
  if (main_similarity.size() == 1) return 0.0;

  std::vector<double> exponents(main_similarity.size());
  for (std::size_t j = 0; j < exponents.size(); ++j) {
    exponents[j] = (main_similarity[j] + prototype_similarity[j]) / tau;
  }
  const double shift = *std::max_element(exponents.begin(), exponents.end());

  double numerator = 0.0;
  double denominator = 0.0;
  for (std::size_t j = 0; j < exponents.size(); ++j) {
    const double w = std::exp(exponents[j] - shift);
    denominator += w;
    if (j != main_position) numerator += w;
  }
  return numerator / denominator;
}

double adherence(const PromptEmbedding& prompt, const Embedding& prototype,
                 double tau) {
  if (!(tau > 0.0)) throw ContractError("adherence: tau must be > 0");
  if (prompt.context().empty()) return 0.0;

  const Embedding& main = prompt.token(prompt.main_index());
  std::vector<std::size_t> selected = prompt.context();
  selected.push_back(prompt.main_index());
  std::sort(selected.begin(), selected.end());

  std::vector<double> main_sim;
  std::vector<double> proto_sim;
  std::size_t main_position = 0;
  for (std::size_t j = 0; j < selected.size(); ++j) {
    const Embedding& c = prompt.token(selected[j]);
    if (selected[j] == prompt.main_index()) main_position = j;
    main_sim.push_back(cosine(main, c));
    proto_sim.push_back(cosine(prototype, c));
  }
  return adherence_from_similarities(main_sim, proto_sim, main_position, tau);
}

Deviation ba_score(std::span<const double> per_group, double pi) {
  if (per_group.size() < 2) throw ContractError("ba_score: need K >= 2 groups");
  Deviation out{-1.0, 0};
  for (std::size_t k = 0; k < per_group.size(); ++k) {
    const double d = std::abs(pi - per_group[k]);
    if (d > out.score) out = {d, k};
  }
  return out;
}

AdherenceResult adherence_scores(const PromptEmbedding& prompt,
                                 const AttributeSet& attrs, double tau,
                                 double pi) {
  AdherenceResult result;
  result.tau = tau;
  result.pi = pi;
  for (const auto& proto : attrs.prototypes()) {
    result.per_group.push_back(adherence(prompt, proto, tau));
  }
  const Deviation d = ba_score(result.per_group, pi);
  result.ba_score = d.score;
  result.dominant_group = d.dominant;
  return result;
}

LatentDeviation latent_deviation(const Embedding& h,
                                 std::span<const Embedding> prototypes,
                                 double tau, double pi) {
  if (!(tau > 0.0)) throw ContractError("latent_deviation: tau must be > 0");
  if (prototypes.size() < 2) {
    throw ContractError("latent_deviation: need prototypes for K >= 2 groups");
  }
  LatentDeviation out;
  out.scores.reserve(prototypes.size());
  double shift = -std::numeric_limits<double>::infinity();
  for (const auto& proto : prototypes) {
    out.scores.push_back(cosine(h, proto) / tau);
    shift = std::max(shift, out.scores.back());
  }
  double total = 0.0;
  for (double& s : out.scores) {
    s = std::exp(s - shift);
    total += s;
  }
  for (double& s : out.scores) s /= total;

  out.dominant_group = static_cast<std::size_t>(
      std::max_element(out.scores.begin(), out.scores.end()) - out.scores.begin());
  for (double s : out.scores) out.deviation = std::max(out.deviation, std::abs(pi - s));
  return out;
}

SimilarityMap similarity_map(const PromptEmbedding& prompt,
                             const AttributeSet& attrs) {
  if (prompt.dim() != attrs.dim()) {
    throw ContractError("similarity_map: prompt/attribute dimension mismatch");
  }
  SimilarityMap map;
  map.group_names = attrs.group_names();
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    const Embedding& c = prompt.token(i);
    map.token_labels.push_back(c.label().empty() ? std::to_string(i) : c.label());
    std::vector<std::optional<double>> row;
    for (const auto& proto : attrs.prototypes()) {
      if (c.is_zero()) {
        row.emplace_back(std::nullopt);
      } else {
        row.emplace_back(cosine(c, proto));
      }
    }
    map.cosines.push_back(std::move(row));
  }
  return map;
}

}  // namespace cbc
