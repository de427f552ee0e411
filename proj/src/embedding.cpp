#include "cbc/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace cbc {
namespace {

void require_same_dim(const Embedding& a, const Embedding& b, const char* op) {
  if (a.dim() != b.dim()) {
    throw ContractError(std::string(op) + ": dimension mismatch (" +
                        std::to_string(a.dim()) + " vs " +
                        std::to_string(b.dim()) + ")");
  }
}

}  // namespace

Embedding::Embedding(std::vector<double> values, std::string label)
    : values_(std::move(values)), label_(std::move(label)) {
  if (values_.empty()) throw ContractError("embedding dimension must be >= 1");
  for (double v : values_) {
    if (!std::isfinite(v)) throw ContractError("embedding has non-finite entry");
  }
}

Embedding::Embedding(std::initializer_list<double> values)
    : Embedding(std::vector<double>(values)) {}

Embedding Embedding::zeros(std::size_t dim, std::string label) {
  return Embedding(std::vector<double>(dim, 0.0), std::move(label));
}

double Embedding::norm() const {
  double sum = 0.0;
  for (double v : values_) sum += v * v;
  return std::sqrt(sum);
}

bool Embedding::is_zero() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return v == 0.0; });
}

Embedding Embedding::with_label(std::string label) const {
  Embedding out = *this;
  out.label_ = std::move(label);
  return out;
}

double dot(const Embedding& a, const Embedding& b) {
  require_same_dim(a, b, "dot");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) sum += a[i] * b[i];
  return sum;
}

double cosine(const Embedding& a, const Embedding& b) {
  require_same_dim(a, b, "cosine");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw ContractError("cosine: zero-norm input");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

Embedding combine(const Embedding& a, double weight_a, const Embedding& b,
                  double weight_b) {
  require_same_dim(a, b, "combine");
  std::vector<double> out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) {
    out[i] = weight_a * a[i] + weight_b * b[i];
  }
  return Embedding(std::move(out), a.label());
}

Embedding add(const Embedding& a, const Embedding& b) {
  return combine(a, 1.0, b, 1.0);
}

Embedding subtract(const Embedding& a, const Embedding& b) {
  return combine(a, 1.0, b, -1.0);
}

Embedding scale(const Embedding& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  return Embedding(std::move(out), a.label());
}

Embedding normalized(const Embedding& a) {
  const double n = a.norm();
  if (n == 0.0) throw ContractError("normalized: zero-norm input");
  return scale(a, 1.0 / n);
}

Projection project_out(const Embedding& c, const Embedding& s) {
  require_same_dim(c, s, "project_out");
  const double ss = dot(s, s);
  if (ss == 0.0) throw ContractError("project_out: zero-norm direction");
  const double coeff = dot(c, s) / ss;
  Embedding residual = scale(s, coeff).with_label(c.label());
  Embedding c_star = subtract(c, residual);
  return {std::move(c_star), std::move(residual)};
}

PromptEmbedding::PromptEmbedding(std::vector<Embedding> tokens,
                                 std::size_t main_index,
                                 std::vector<std::size_t> context)
    : tokens_(std::move(tokens)), main_(main_index), context_(std::move(context)) {
  if (tokens_.empty()) throw ContractError("prompt has no tokens");
  const std::size_t dim = tokens_.front().dim();
  for (const auto& t : tokens_) {
    if (t.dim() != dim) throw ContractError("prompt tokens differ in dimension");
  }
  if (main_ >= tokens_.size()) throw ContractError("main index out of range");
  std::sort(context_.begin(), context_.end());
  context_.erase(std::unique(context_.begin(), context_.end()), context_.end());
  for (std::size_t i : context_) {
    if (i >= tokens_.size()) throw ContractError("context index out of range");
    if (i == main_) throw ContractError("context set contains the main index");
  }
}

PromptEmbedding PromptEmbedding::with_tokens(std::vector<Embedding> tokens) const {
  if (tokens.size() != tokens_.size()) {
    throw ContractError("with_tokens: token count changed");
  }
  return PromptEmbedding(std::move(tokens), main_, context_);
}

AttributeSet::AttributeSet(std::vector<std::string> group_names,
                           std::vector<Embedding> attribute_embeddings,
                           std::vector<Embedding> text_prototypes)
    : names_(std::move(group_names)),
      attributes_(std::move(attribute_embeddings)),
      prototypes_(std::move(text_prototypes)) {
  if (names_.size() < 2) throw ContractError("attribute set needs K >= 2 groups");
  if (attributes_.size() != names_.size() || prototypes_.size() != names_.size()) {
    throw ContractError("attribute set: group/embedding count mismatch");
  }
  if (std::set<std::string>(names_.begin(), names_.end()).size() != names_.size()) {
    throw ContractError("attribute set: duplicate group name");
  }
  const std::size_t dim = attributes_.front().dim();
  for (std::size_t k = 0; k < names_.size(); ++k) {
    if (attributes_[k].dim() != dim || prototypes_[k].dim() != dim) {
      throw ContractError("attribute set: embeddings differ in dimension");
    }
  }
}

}  // namespace cbc
