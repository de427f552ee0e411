#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "cbc/bias_scoring.hpp"
#include "support.hpp"

using namespace cbc;

namespace {

struct Instance {
  std::vector<Embedding> tokens;
  std::size_t main = 0;
  std::vector<std::size_t> context;
  std::vector<Embedding> protos;
};

Instance random_instance(std::mt19937_64& rng, std::size_t max_m, std::size_t max_k) {
  std::uniform_int_distribution<std::size_t> dim_d(2, 12);
  std::uniform_int_distribution<std::size_t> m_d(1, max_m);
  std::uniform_int_distribution<std::size_t> k_d(2, max_k);
  const std::size_t dim = dim_d(rng);
  const std::size_t selected = m_d(rng);
  const std::size_t length = selected + 2;
  Instance in;
  for (std::size_t i = 0; i < length; ++i) in.tokens.push_back(test::random_embedding(rng, dim));
  std::vector<std::size_t> idx(length);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  in.main = idx[0];
  in.context.assign(idx.begin() + 1, idx.begin() + static_cast<std::ptrdiff_t>(selected));
  const std::size_t k = k_d(rng);
  for (std::size_t j = 0; j < k; ++j) in.protos.push_back(test::random_embedding(rng, dim));
  return in;
}

std::vector<std::vector<double>> raw_tokens(const Instance& in) {
  std::vector<std::vector<double>> out;
  for (const auto& t : in.tokens) out.push_back(test::raw(t));
  return out;
}

}  // namespace

TEST_CASE("adherence with no context tokens is zero") {
  const PromptEmbedding p({{1, 0}, {0, 1}}, 0, {});
  CHECK(adherence(p, {1, 1}, 0.1) == 0.0);
}

TEST_CASE("adherence in the large-temperature limit") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Instance in = random_instance(rng, 12, 2);
    const PromptEmbedding p(in.tokens, in.main, in.context);
    const double m = static_cast<double>(p.selected_count());
    CHECK(std::abs(adherence(p, in.protos[0], 1e6) - (m - 1) / m) <= 1e-4);
  }
}

TEST_CASE("adherence two-token hand case") {
  // cos(c_m, c_1) = 0.5, cos(p, c_1) = 0.5, cos(p, c_m) = 0.2, tau = 0.1:
  // e^10 / (e^10 + e^12) = 1 / (1 + e^2).
  const double y = 0.4 / std::sqrt(0.75);
  const Embedding cm{1, 0, 0};
  const Embedding c1{0.5, std::sqrt(0.75), 0};
  const Embedding p{0.2, y, std::sqrt(1 - 0.04 - y * y)};
  const PromptEmbedding prompt({cm, c1}, 0, {1});
  const double expected = 0.11920292202211755;
  CHECK(test::rel_err(adherence(prompt, p, 0.1), expected) <= 1e-9);
  CHECK(test::rel_err(test::naive_adherence({test::raw(cm), test::raw(c1)}, 0, {1},
                                            test::raw(p), 0.1),
                      expected) <= 1e-9);
}

TEST_CASE("adherence matches the naive oracle") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const Instance in = random_instance(rng, 12, 4);
    const PromptEmbedding p(in.tokens, in.main, in.context);
    for (double tau : {0.05, 0.1, 1.0}) {
      for (const auto& proto : in.protos) {
        const double want = test::naive_adherence(raw_tokens(in), in.main, p.context(),
                                                  test::raw(proto), tau);
        CHECK(test::rel_err(adherence(p, proto, tau), want) <= 1e-9);
      }
    }
  }
}

TEST_CASE("adherence stays finite at tiny temperature") {
  std::mt19937_64 rng(9);
  const Instance in = random_instance(rng, 6, 2);
  const PromptEmbedding p(in.tokens, in.main, in.context);
  const double b = adherence(p, in.protos[0], 1e-3);
  CHECK(std::isfinite(b));
  CHECK(b >= 0.0);
  CHECK(b <= 1.0);
}

TEST_CASE("adherence bounds") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const Instance in = random_instance(rng, 12, 3);
    const PromptEmbedding p(in.tokens, in.main, in.context);
    const double m = static_cast<double>(p.selected_count());
    const Embedding& cm = p.token(p.main_index());
    for (const auto& proto : in.protos) {
      const double b = adherence(p, proto, 0.1);
      CHECK(b >= 0.0);
      CHECK(b < 1.0);
      // (M-1)/M only caps the ratio when no context exponent beats the main one.
      const double main_exp = 1.0 + cosine(proto, cm);
      bool main_dominates = true;
      for (std::size_t i : p.context()) {
        main_dominates = main_dominates &&
                         cosine(cm, p.token(i)) + cosine(proto, p.token(i)) <= main_exp;
      }
      if (main_dominates) CHECK(b <= (m - 1) / m + 1e-12);
      // Large tau flattens every weight toward 1/M.
      CHECK(adherence(p, proto, 1e9) == doctest::Approx((m - 1) / m).epsilon(1e-6));
    }
  }
}

TEST_CASE("a context token closer to the prototype than the main object exceeds (M-1)/M") {
  const std::vector<double> main_sim{1.0, 0.99};
  const std::vector<double> proto_sim{0.0, 0.5};
  const double b = adherence_from_similarities(main_sim, proto_sim, 0, 0.1);
  CHECK(b > 0.5);
  CHECK(b == doctest::Approx(1.0 / (1.0 + std::exp(-4.9))).epsilon(1e-12));
}

TEST_CASE("adherence increases with a context token's prototype similarity") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  std::uniform_int_distribution<std::size_t> len(2, 8);
  const double h = 1e-4;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = len(rng);
    std::vector<double> main_sim(n);
    std::vector<double> proto_sim(n);
    for (std::size_t j = 0; j < n; ++j) {
      main_sim[j] = u(rng);
      proto_sim[j] = u(rng);
    }
    const std::size_t main_pos = trial % n;
    main_sim[main_pos] = 1.0;
    const std::size_t bumped = (main_pos + 1) % n;
    const double before = adherence_from_similarities(main_sim, proto_sim, main_pos, 0.5);
    proto_sim[bumped] += h;
    const double after = adherence_from_similarities(main_sim, proto_sim, main_pos, 0.5);
    CHECK(after > before);
  }
}

TEST_CASE("adherence rejects non-positive temperature") {
  const PromptEmbedding p({{1, 0}, {0, 1}}, 0, {1});
  CHECK_THROWS_AS(adherence(p, {1, 0}, 0.0), ContractError);
  CHECK_THROWS_AS(adherence(p, {1, 0}, -1.0), ContractError);
}

TEST_CASE("ba_score examples") {
  auto d = ba_score(std::vector<double>{0.5, 0.5}, 0.5);
  CHECK(d.score == 0.0);
  CHECK(d.dominant == 0);
  d = ba_score(std::vector<double>{0.9, 0.2}, 0.5);
  CHECK(d.score == doctest::Approx(0.4));
  CHECK(d.dominant == 0);
  d = ba_score(std::vector<double>{0.3, 0.7}, 0.5);
  CHECK(d.score == doctest::Approx(0.2));
  CHECK(d.dominant == 0);
  CHECK_THROWS_AS(ba_score(std::vector<double>{0.3}, 0.5), ContractError);
}

TEST_CASE("ba_score lies in [0, 0.5] for adherence values in (0, 1)") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(1e-9, 1 - 1e-9);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v(2 + trial % 3);
    for (double& x : v) x = u(rng);
    const auto d = ba_score(v, 0.5);
    CHECK(d.score >= 0.0);
    CHECK(d.score <= 0.5);
  }
}

TEST_CASE("adherence_scores reports the deviation of its own per-group values") {
  std::mt19937_64 rng(23);
  const Instance in = random_instance(rng, 6, 3);
  std::vector<std::string> names;
  for (std::size_t k = 0; k < in.protos.size(); ++k) names.push_back("g" + std::to_string(k));
  const AttributeSet attrs(names, in.protos, in.protos);
  const PromptEmbedding p(in.tokens, in.main, in.context);
  const auto r = adherence_scores(p, attrs, 0.1, 0.5);
  const auto d = ba_score(r.per_group, 0.5);
  CHECK(r.ba_score == d.score);
  CHECK(r.dominant_group == d.dominant);
}

TEST_CASE("latent_deviation examples") {
  const Embedding p0{1, 0};
  const Embedding p1{0, 1};
  const std::vector<Embedding> protos{p0, p1};

  auto r = latent_deviation({1, 1}, protos, 0.1);
  CHECK(r.scores[0] == doctest::Approx(0.5));
  CHECK(r.deviation == doctest::Approx(0.0));

  // softmax(10, 0)
  r = latent_deviation(p0, protos, 0.1);
  CHECK(r.scores[0] == doctest::Approx(0.9999546).epsilon(1e-7));
  CHECK(r.scores[1] == doctest::Approx(0.0000454).epsilon(1e-3));
  CHECK(r.dominant_group == 0);

  const std::vector<Embedding> three{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  r = latent_deviation({0.2, 0.9, 0.3}, three, 0.1);
  CHECK(r.dominant_group == 1);
}

TEST_CASE("latent_deviation scores form a distribution") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 200; ++trial) {
    const auto h = test::random_embedding(rng, 6);
    std::vector<Embedding> protos;
    for (int k = 0; k < 2 + trial % 3; ++k) protos.push_back(test::random_embedding(rng, 6));
    const auto r = latent_deviation(h, protos, 0.1);
    CHECK(std::abs(std::accumulate(r.scores.begin(), r.scores.end(), 0.0) - 1.0) <= 1e-12);

    // Independent softmax: the result does not depend on the shift used.
    std::vector<double> cos(protos.size());
    double total = 0.0;
    for (std::size_t k = 0; k < protos.size(); ++k) {
      cos[k] = test::naive_cos(test::raw(h), test::raw(protos[k]));
      total += std::exp((cos[k] + 3.0) / 0.1);
    }
    for (std::size_t k = 0; k < protos.size(); ++k) {
      CHECK(std::abs(r.scores[k] - std::exp((cos[k] + 3.0) / 0.1) / total) <= 1e-12);
    }
  }
}

TEST_CASE("latent_deviation rejects a single prototype") {
  const std::vector<Embedding> one{{1, 0}};
  CHECK_THROWS_AS(latent_deviation({1, 0}, one, 0.1), ContractError);
}

TEST_CASE("similarity_map examples") {
  const Embedding p0{1, 0, 0};
  const Embedding p1{0.6, 0.8, 0};
  const AttributeSet attrs({"f", "m"}, {p0, p1}, {p0, p1});

  auto map = similarity_map(PromptEmbedding({p0}, 0, {}), attrs);
  CHECK(*map.cosines[0][0] == doctest::Approx(1.0));
  CHECK(*map.cosines[0][1] == doctest::Approx(0.6));

  map = similarity_map(PromptEmbedding({{0, 0, 1}, {0, 0, 0}}, 0, {}), attrs);
  CHECK(*map.cosines[0][0] == doctest::Approx(0.0));
  CHECK(*map.cosines[0][1] == doctest::Approx(0.0));
  CHECK_FALSE(map.cosines[1][0].has_value());
  CHECK(map.group_names == std::vector<std::string>{"f", "m"});
}
