#pragma once

// Dense embedding vectors and the small amount of geometry the control
// pipeline needs: inner products, cosine similarity and Gram-Schmidt
// projection onto a single attribute direction.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbc {

// Thrown when inputs violate an operation's contract (dimension mismatch,
// zero-norm vector where a direction is required, bad index, ...).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An immutable-by-convention embedding vector with an optional token label.
// Entries must be finite. Zero vectors are allowed (padding tokens) but are
// rejected by cosine() and as a projection direction.
class Embedding {
 public:
  Embedding() = default;
  explicit Embedding(std::vector<double> values, std::string label = {});
  Embedding(std::initializer_list<double> values);

  static Embedding zeros(std::size_t dim, std::string label = {});

  std::size_t dim() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  const std::string& label() const { return label_; }
  double operator[](std::size_t i) const { return values_[i]; }

  double norm() const;
  bool is_zero() const;

  Embedding with_label(std::string label) const;

  friend bool operator==(const Embedding& a, const Embedding& b) {
    return a.values_ == b.values_;
  }

 private:
  std::vector<double> values_;
  std::string label_;
};

double dot(const Embedding& a, const Embedding& b);

// <a,b> / (|a| |b|), clamped to [-1, 1].
double cosine(const Embedding& a, const Embedding& b);

Embedding add(const Embedding& a, const Embedding& b);
Embedding subtract(const Embedding& a, const Embedding& b);
Embedding scale(const Embedding& a, double factor);
// a * weight_a + b * weight_b
Embedding combine(const Embedding& a, double weight_a, const Embedding& b,
                  double weight_b);
Embedding normalized(const Embedding& a);

// Result of removing the component of `c` along `s`:
//   residual = (<c,s>/<s,s>) s,   c_star = c - residual.
struct Projection {
  Embedding c_star;
  Embedding residual;
};

Projection project_out(const Embedding& c, const Embedding& s);

// Ordered token embeddings of one prompt, the main-object index and the set
// of selected context tokens (nouns/adjectives bound to the main object).
class PromptEmbedding {
 public:
  PromptEmbedding(std::vector<Embedding> tokens, std::size_t main_index,
                  std::vector<std::size_t> context);

  const std::vector<Embedding>& tokens() const { return tokens_; }
  const Embedding& token(std::size_t i) const { return tokens_.at(i); }
  std::size_t size() const { return tokens_.size(); }
  std::size_t dim() const { return tokens_.front().dim(); }
  std::size_t main_index() const { return main_; }
  // Sorted, unique, never contains main_index().
  const std::vector<std::size_t>& context() const { return context_; }
  // Main object plus selected context tokens.
  std::size_t selected_count() const { return context_.size() + 1; }

  PromptEmbedding with_tokens(std::vector<Embedding> tokens) const;

 private:
  std::vector<Embedding> tokens_;
  std::size_t main_;
  std::vector<std::size_t> context_;
};

// K >= 2 sensitive groups: attribute token embeddings s_k and text
// prototypes p_k, all in the prompt embedding space.
class AttributeSet {
 public:
  AttributeSet(std::vector<std::string> group_names,
               std::vector<Embedding> attribute_embeddings,
               std::vector<Embedding> text_prototypes);

  std::size_t group_count() const { return names_.size(); }
  std::size_t dim() const { return attributes_.front().dim(); }
  const std::vector<std::string>& group_names() const { return names_; }
  const Embedding& attribute(std::size_t k) const { return attributes_.at(k); }
  const Embedding& prototype(std::size_t k) const { return prototypes_.at(k); }
  const std::vector<Embedding>& attributes() const { return attributes_; }
  const std::vector<Embedding>& prototypes() const { return prototypes_; }

 private:
  std::vector<std::string> names_;
  std::vector<Embedding> attributes_;
  std::vector<Embedding> prototypes_;
};

}  // namespace cbc
