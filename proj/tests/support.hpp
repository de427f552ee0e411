#pragma once

// Test-only helpers: random instances and oracles written independently of
// the library (plain loops, no shared helpers).

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "cbc/embedding.hpp"

namespace cbc::test {

inline Embedding random_embedding(std::mt19937_64& rng, std::size_t dim, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> v(dim);
  for (double& x : v) x = n(rng);
  return Embedding(std::move(v));
}

inline double naive_cos(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// Direct transcription of the adherence ratio: no shifting, no reuse of the
// library's cosine.
inline double naive_adherence(const std::vector<std::vector<double>>& tokens, std::size_t m,
                              const std::vector<std::size_t>& context,
                              const std::vector<double>& proto, double tau) {
  std::vector<std::size_t> selected = context;
  selected.push_back(m);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i : selected) {
    const double w =
        std::exp((naive_cos(tokens[m], tokens[i]) + naive_cos(proto, tokens[i])) / tau);
    den += w;
    if (i != m) num += w;
  }
  return num / den;
}

inline std::vector<double> raw(const Embedding& e) {
  return {e.values().begin(), e.values().end()};
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

}  // namespace cbc::test
