#pragma once

// Bias adherence scoring in text space and its latent-space counterpart.
//
// For a prompt with main object m and selected context tokens I, the
// adherence of group k is the share of softmax mass carried by context tokens
// when every selected token i is weighted by
//     exp((cos(c_m, c_i) + cos(p_k, c_i)) / tau)
// The main object contributes its own term (cos(c_m, c_m) = 1) to the
// denominator only. The BA-Score is the largest deviation from the balance
// target pi over groups.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbc/embedding.hpp"

namespace cbc {

inline constexpr double kDefaultTau = 0.1;
inline constexpr double kDefaultPi = 0.5;

double adherence(const PromptEmbedding& prompt, const Embedding& prototype,
                 double tau);

// Same ratio from precomputed similarities of the selected tokens: cos(c_m,
// c_i) and cos(p_k, c_i), with the main object at `main_position`.
double adherence_from_similarities(std::span<const double> main_similarity,
                                   std::span<const double> prototype_similarity,
                                   std::size_t main_position, double tau);

struct Deviation {
  double score = 0.0;          // max_k |pi - value_k|
  std::size_t dominant = 0;    // argmax, ties -> lowest index
};

Deviation ba_score(std::span<const double> per_group, double pi = kDefaultPi);

struct AdherenceResult {
  std::vector<double> per_group;
  double ba_score = 0.0;
  std::size_t dominant_group = 0;
  double tau = kDefaultTau;
  double pi = kDefaultPi;
};

AdherenceResult adherence_scores(const PromptEmbedding& prompt,
                                 const AttributeSet& attrs,
                                 double tau = kDefaultTau,
                                 double pi = kDefaultPi);

struct LatentDeviation {
  std::vector<double> scores;  // softmax over groups, sums to 1
  std::size_t dominant_group = 0;
  double deviation = 0.0;
};

// scores_k = softmax_k(cos(h, proto_k) / tau).
LatentDeviation latent_deviation(const Embedding& h,
                                 std::span<const Embedding> prototypes,
                                 double tau = kDefaultTau,
                                 double pi = kDefaultPi);

// Token x group cosine table. Entries for zero-norm tokens are absent.
struct SimilarityMap {
  std::vector<std::string> token_labels;
  std::vector<std::string> group_names;
  std::vector<std::vector<std::optional<double>>> cosines;
};

SimilarityMap similarity_map(const PromptEmbedding& prompt,
                             const AttributeSet& attrs);

}  // namespace cbc
