#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>

#include "cbc/control.hpp"
#include "support.hpp"

using namespace cbc;

namespace {

std::shared_ptr<const AttributeSet> axis_attrs() {
  return std::make_shared<const AttributeSet>(
      std::vector<std::string>{"f", "m"}, std::vector<Embedding>{{1, 0, 0}, {0, 1, 0}},
      std::vector<Embedding>{{1, 0, 0}, {0, 1, 0}});
}

// Every step holds prototypes e0 (group 0) and e1 (group 1).
PrototypeBank axis_bank(std::size_t last_step) {
  std::vector<Embedding> protos;
  for (std::size_t t = 0; t <= last_step; ++t) {
    protos.push_back({1, 0, 0});
    protos.push_back({0, 1, 0});
  }
  return PrototypeBank(2, last_step, std::move(protos));
}

}  // namespace

TEST_CASE("config validation") {
  CbcConfig c;
  CHECK_NOTHROW(c.validate());
  c.delta_r = 1.5;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = {};
  c.delta_c = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = {};
  c.theta = 0.6;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = {};
  c.tau = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  CHECK(parse_init_mode("semantic-similarity") == InitMode::kSemanticSimilarity);
  CHECK(to_string(InitMode::kNone) == "none");
  CHECK_THROWS_AS(parse_init_mode("clip"), ContractError);
}

TEST_CASE("decouple_tokens examples") {
  const AttributeSet attrs({"f", "m"}, {{1, 0}, {0, 1}}, {{1, 0}, {0, 1}});

  SUBCASE("hand Gram-Schmidt per group") {
    const PromptEmbedding p({{2, 2}, {1, 1}}, 0, {1});
    const std::vector<std::size_t> sel{1};
    const auto d = decouple_tokens(p, attrs, 0, sel);
    CHECK(d.tokens[1] == Embedding{0, 1});
    CHECK(d.tokens[0] == Embedding{2, 2});
    REQUIRE(d.residuals.size() == 1);
    CHECK(d.residuals[0].decoupled_against == 0);
    CHECK(d.residuals[0].per_group[0] == Embedding{1, 0});
    CHECK(d.residuals[0].per_group[1] == Embedding{0, 1});
  }
  SUBCASE("orthogonal token is unchanged") {
    const PromptEmbedding p({{0, 3}}, 0, {});
    const std::vector<std::size_t> sel{0};
    const auto d = decouple_tokens(p, attrs, 0, sel);
    CHECK(d.tokens[0] == Embedding{0, 3});
    CHECK(d.residuals[0].per_group[0].is_zero());
  }
  SUBCASE("token equal to the attribute is flagged") {
    const PromptEmbedding p({{1, 0}}, 0, {});
    const std::vector<std::size_t> sel{0};
    const auto d = decouple_tokens(p, attrs, 0, sel);
    CHECK(d.tokens[0].is_zero());
    CHECK(d.fully_aligned == std::vector<std::size_t>{0});
  }
  SUBCASE("empty selection leaves the prompt and is flagged") {
    const PromptEmbedding p({{1, 2}}, 0, {});
    const auto d = decouple_tokens(p, attrs, 1, {});
    CHECK(d.empty_selection);
    CHECK(d.residuals.empty());
    CHECK(d.tokens == p.tokens());
  }
  SUBCASE("bad indices") {
    const PromptEmbedding p({{1, 2}}, 0, {});
    const std::vector<std::size_t> sel{3};
    CHECK_THROWS_AS(decouple_tokens(p, attrs, 0, sel), ContractError);
    CHECK_THROWS_AS(decouple_tokens(p, attrs, 2, {}), ContractError);
  }
}

TEST_CASE("decoupling is undone by adding back the residual") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Embedding> toks;
    for (int i = 0; i < 5; ++i) toks.push_back(test::random_embedding(rng, 16));
    const AttributeSet attrs({"a", "b", "c"},
                             {test::random_embedding(rng, 16), test::random_embedding(rng, 16),
                              test::random_embedding(rng, 16)},
                             {test::random_embedding(rng, 16), test::random_embedding(rng, 16),
                              test::random_embedding(rng, 16)});
    const PromptEmbedding p(toks, 0, {1, 2});
    const std::size_t target = static_cast<std::size_t>(trial % 3);
    const std::vector<std::size_t> sel{1, 3, 4};
    const auto d = decouple_tokens(p, attrs, target, sel);
    for (const auto& r : d.residuals) {
      const Embedding back = add(d.tokens[r.token], r.per_group[target]);
      CHECK(subtract(back, toks[r.token]).norm() / toks[r.token].norm() <= 1e-5);
      CHECK(std::abs(cosine(d.tokens[r.token], attrs.attribute(target))) <= 1e-6);
    }
  }
}

TEST_CASE("mean_other_residual examples") {
  const std::vector<Embedding> two{{1, 2}, {3, 4}};
  CHECK(mean_other_residual(two, 0) == Embedding{3, 4});
  const std::vector<Embedding> three{{9, 9}, {1, 0}, {0, 1}};
  CHECK(mean_other_residual(three, 0) == Embedding{0.5, 0.5});
  const std::vector<Embedding> zeros{{0, 0}, {0, 0}, {0, 0}};
  CHECK(mean_other_residual(zeros, 1).is_zero());
  const std::vector<Embedding> one{{1, 0}};
  CHECK_THROWS_AS(mean_other_residual(one, 0), ContractError);
}

TEST_CASE("inject_step examples") {
  const Embedding c{1, 2, 3};
  const Embedding r{-1, 0, 4};
  CHECK(inject_step(c, r, 0.0) == c);
  CHECK(inject_step(c, r, 1.0) == r);
  CHECK(inject_step(r, r, 0.3) == r);
  CHECK_THROWS_AS(inject_step(c, r, 1.2), ContractError);
}

TEST_CASE("iterated injection follows the geometric closed form") {
  std::mt19937_64 rng(37);
  const auto c0 = test::random_embedding(rng, 8);
  const auto rb = test::random_embedding(rng, 8);
  for (double dr : {0.2, 0.3, 0.5}) {
    Embedding c = c0;
    for (int n = 1; n <= 50; ++n) {
      c = inject_step(c, rb, dr);
      const Embedding closed = combine(rb, 1.0, subtract(c0, rb), std::pow(1 - dr, n));
      CHECK(subtract(c, closed).norm() <= 1e-9 * closed.norm());
      // The distance itself shrinks below rounding noise once (1 - dr)^n is tiny.
      if (std::pow(1 - dr, n) >= 1e-4) {
        const double want = std::pow(1 - dr, n) * subtract(c0, rb).norm();
        CHECK(test::rel_err(subtract(c, rb).norm(), want) <= 1e-9);
      }
    }
  }
}

TEST_CASE("rescale_attention examples") {
  const std::vector<std::size_t> first{0};

  SUBCASE("delta_c = 1 at t = 0 is the identity") {
    const Matrix a(2, 3, {0.2, 0.3, 0.5, 0.6, 0.1, 0.3});
    const Matrix b = rescale_attention(a, first, 1.0, 0, 10);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(b.data()[i] == doctest::Approx(a.data()[i]).epsilon(1e-15));
    }
  }
  SUBCASE("uniform row, one injected token, delta_c = 2") {
    const Matrix a(1, 4, 0.25);
    const Matrix b = rescale_attention(a, first, 2.0, 0, 50);
    CHECK(b(0, 0) == doctest::Approx(0.4));
    CHECK(b(0, 1) == doctest::Approx(0.2));
    CHECK(b(0, 2) == doctest::Approx(0.2));
    CHECK(b(0, 3) == doctest::Approx(0.2));
  }
  SUBCASE("t = T zeroes injected columns") {
    const Matrix a(1, 4, {0.1, 0.2, 0.3, 0.4});
    const Matrix b = rescale_attention(a, first, 5.0, 50, 50);
    CHECK(b(0, 0) == 0.0);
    CHECK(b(0, 1) == doctest::Approx(0.2 / 0.9));
    CHECK(b(0, 3) == doctest::Approx(0.4 / 0.9));
  }
  SUBCASE("all columns injected at t = T is degenerate") {
    const Matrix a(1, 2, 0.5);
    const std::vector<std::size_t> all{0, 1};
    CHECK_THROWS_WITH_AS(rescale_attention(a, all, 2.0, 10, 10), "attention degenerate",
                         ContractError);
  }
  SUBCASE("non-stochastic rows are rejected") {
    const Matrix a(1, 2, 0.4);
    CHECK_THROWS_AS(rescale_attention(a, first, 2.0, 0, 10), ContractError);
  }
}

TEST_CASE("controller with a balanced indicator holds") {
  auto attrs = axis_attrs();
  auto prompt = std::make_shared<const PromptEmbedding>(
      std::vector<Embedding>{{0, 0, 1}, {1, 1, 1}}, 0, std::vector<std::size_t>{1});
  CbcConfig cfg;
  cfg.steps = 3;
  cfg.controlled_tokens = {1};
  const auto bank = axis_bank(3);

  auto s = make_controller_state(cfg, prompt, attrs);
  s = controller_advance(s, nullptr, &bank).state;  // t = 0 decouples
  const auto tokens = s.tokens;
  const Embedding h{1, 1, 0};  // equidistant from both prototypes
  const auto r = controller_advance(s, &h, &bank);
  CHECK_FALSE(r.action.injected);
  CHECK(r.state.deviation == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.state.tokens == tokens);
  CHECK(r.state.t == 2);
}

TEST_CASE("controller injects the other group's residual past the threshold") {
  auto attrs = axis_attrs();
  auto prompt = std::make_shared<const PromptEmbedding>(
      std::vector<Embedding>{{0, 0, 1}, {1, 2, 1}}, 0, std::vector<std::size_t>{1});
  CbcConfig cfg;
  cfg.steps = 5;
  cfg.controlled_tokens = {1};
  cfg.init_mode = InitMode::kNone;
  cfg.delta_r = 0.2;
  cfg.theta = 0.1;
  cfg.tau = 1.0 / std::log(19.0);  // softmax(1/tau, 0) = (0.95, 0.05)
  const auto bank = axis_bank(5);

  auto s = make_controller_state(cfg, prompt, attrs);
  auto first = controller_advance(s, nullptr, &bank);
  CHECK_FALSE(first.action.injected);  // uniform start
  s = first.state;
  const Embedding before = s.tokens[1];

  const Embedding h{3, 0, 0};  // collinear with the group-0 prototype
  const auto r = controller_advance(s, &h, &bank);
  CHECK(r.state.deviation == doctest::Approx(0.45).epsilon(1e-12));
  CHECK(r.state.dominant_group == 0);
  REQUIRE(r.action.injected);
  const Embedding r1 = r.state.decoupled->find(1)->per_group[1];
  CHECK(r.state.tokens[1] == inject_step(before, r1, 0.2));
  REQUIRE(r.state.injection_log.size() == 1);
  CHECK(r.state.injection_log[0] == InjectionRecord{1, 1, 0, 0.2});
  CHECK(r.state.injected == std::vector<std::size_t>{1});
}

TEST_CASE("ba-score init with no context tokens fires on a tie") {
  auto attrs = axis_attrs();
  auto prompt = std::make_shared<const PromptEmbedding>(
      std::vector<Embedding>{{0, 0, 1}, {1, 2, 1}}, 0, std::vector<std::size_t>{});
  CbcConfig cfg;
  cfg.steps = 2;
  cfg.controlled_tokens = {1};
  auto s = make_controller_state(cfg, prompt, attrs);
  const auto r = controller_advance(s, nullptr, nullptr);
  CHECK(r.state.bias_indicator == std::vector<double>{0.0, 0.0});
  CHECK(r.state.deviation == 0.5);
  CHECK(r.state.dominant_group == 0);
  CHECK(r.action.injected);
  CHECK(r.action.excluded_group == 0);
}

TEST_CASE("semantic-similarity init averages raw cosines of controlled tokens") {
  auto attrs = axis_attrs();
  auto prompt = std::make_shared<const PromptEmbedding>(
      std::vector<Embedding>{{0, 0, 1}, {0, 1, 0}, {1, 1, 0}}, 0, std::vector<std::size_t>{1, 2});
  CbcConfig cfg;
  cfg.steps = 2;
  cfg.controlled_tokens = {1, 2};
  cfg.init_mode = InitMode::kSemanticSimilarity;
  const auto r = controller_advance(make_controller_state(cfg, prompt, attrs), nullptr, nullptr);
  const double h = std::sqrt(0.5);
  CHECK(r.state.bias_indicator[0] == doctest::Approx(h / 2));
  CHECK(r.state.bias_indicator[1] == doctest::Approx((1 + h) / 2));
  // Deviations from 0.5 are 0.146 and 0.354.
  CHECK(r.state.dominant_group == 1);
  CHECK(r.state.deviation == doctest::Approx((1 + h) / 2 - 0.5));
}

TEST_CASE("controller errors") {
  auto attrs = axis_attrs();
  auto prompt = std::make_shared<const PromptEmbedding>(
      std::vector<Embedding>{{0, 0, 1}, {1, 2, 1}}, 0, std::vector<std::size_t>{1});
  CbcConfig cfg;
  cfg.steps = 2;
  cfg.controlled_tokens = {1};
  const auto bank = axis_bank(0);
  const Embedding h{1, 0, 0};

  auto s = make_controller_state(cfg, prompt, attrs);
  CHECK_THROWS_AS(controller_advance(s, &h, &bank), ContractError);
  s = controller_advance(s, nullptr, &bank).state;
  CHECK_THROWS_AS(controller_advance(s, nullptr, &bank), ContractError);
  CHECK_THROWS_WITH_AS(controller_advance(s, &h, &bank), "missing latent prototypes for step 1",
                       ContractError);
  const auto full = axis_bank(2);
  s = controller_advance(s, &h, &full).state;
  CHECK_THROWS_AS(controller_advance(s, &h, &full), ContractError);

  cfg.controlled_tokens = {7};
  CHECK_THROWS_AS(make_controller_state(cfg, prompt, attrs), ContractError);
}

TEST_CASE("controller is deterministic") {
  std::mt19937_64 rng(41);
  std::vector<Embedding> toks;
  for (int i = 0; i < 4; ++i) toks.push_back(test::random_embedding(rng, 3));
  auto prompt = std::make_shared<const PromptEmbedding>(toks, 0, std::vector<std::size_t>{2, 3});
  CbcConfig cfg;
  cfg.steps = 4;
  cfg.controlled_tokens = {2, 3};
  const auto bank = axis_bank(4);
  auto a = make_controller_state(cfg, prompt, axis_attrs());
  auto b = a;
  a = controller_advance(a, nullptr, &bank).state;
  b = controller_advance(b, nullptr, &bank).state;
  for (int step = 1; step < 4; ++step) {
    const auto h = test::random_embedding(rng, 3);
    a = controller_advance(a, &h, &bank).state;
    b = controller_advance(b, &h, &bank).state;
    CHECK(a.tokens == b.tokens);
    CHECK(a.injection_log == b.injection_log);
    CHECK(a.bias_indicator == b.bias_indicator);
  }
}
