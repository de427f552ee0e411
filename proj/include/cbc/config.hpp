#pragma once

// Run configuration: controller knobs, toy world, an optional single prompt
// for `simulate` and an optional template grid for `grid`. Stored as one JSON
// document.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cbc/control.hpp"
#include "cbc/toy_diffusion.hpp"

namespace cbc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TokenSpec {
  std::string label;
  double gender_cos = 0.0;
  double semantic = 0.3;
};

struct PromptConfig {
  std::vector<TokenSpec> tokens;
  std::size_t main = 0;
  std::vector<std::size_t> context;
};

struct SlotValue {
  std::string name;
  double gender_cos = 0.0;
  std::string verb;  // objects only
};

struct PromptTemplate {
  std::string pattern = "a photo of a [occupation] [verb] a [color] [object]";
  std::vector<SlotValue> occupations;
  std::vector<SlotValue> colors;
  std::vector<SlotValue> objects;
};

struct GridConfig {
  PromptTemplate prompt_template;
  std::size_t seeds_per_cell = 50;
  // Bindings alone by default; adding the occupation trades alignment for
  // fairness when the occupation itself carries the bias.
  bool control_occupation = false;
};

struct RunConfig {
  std::uint64_t seed = 0;
  CbcConfig cbc;
  ToyWorldParams world;
  std::optional<PromptConfig> prompt;
  std::optional<GridConfig> grid;
};

RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::filesystem::path& path);

// Builds the prompt's token embeddings in `world`.
PromptEmbedding build_prompt(const ToyWorld& world, const PromptConfig& prompt);

}  // namespace cbc
