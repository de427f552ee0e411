#include "cbc/config.hpp"

#include <fstream>
#include <iterator>

#include <json.hpp>

namespace cbc {
namespace {

using nlohmann::json;

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  return obj.at(key).get<T>();
}

std::vector<SlotValue> parse_slot_values(const json& arr, bool objects) {
  std::vector<SlotValue> out;
  for (const auto& item : arr) {
    SlotValue v;
    if (item.is_string()) {
      v.name = item.get<std::string>();
    } else {
      v.name = item.at("name").get<std::string>();
      v.gender_cos = get_or(item, "gender_cos", 0.0);
      if (objects) v.verb = get_or<std::string>(item, "verb", "");
    }
    out.push_back(std::move(v));
  }
  return out;
}

RunConfig parse_document(const json& doc) {
  RunConfig cfg;
  cfg.seed = get_or<std::uint64_t>(doc, "seed", 0);

  if (doc.contains("cbc")) {
    const json& c = doc.at("cbc");
    cfg.cbc.delta_r = get_or(c, "delta_r", cfg.cbc.delta_r);
    cfg.cbc.delta_c = get_or(c, "delta_c", cfg.cbc.delta_c);
    cfg.cbc.tau = get_or(c, "tau", cfg.cbc.tau);
    cfg.cbc.pi = get_or(c, "pi", cfg.cbc.pi);
    cfg.cbc.theta = get_or(c, "theta", cfg.cbc.theta);
    cfg.cbc.steps = get_or(c, "T", cfg.cbc.steps);
    cfg.cbc.controlled_tokens =
        get_or(c, "controlled_tokens", std::vector<std::size_t>{});
    cfg.cbc.init_mode = parse_init_mode(get_or<std::string>(c, "init_mode", "ba-score"));
  }

  ToyWorldParams& w = cfg.world;
  if (doc.contains("world")) {
    const json& j = doc.at("world");
    w.dim = get_or(j, "dim", w.dim);
    w.alpha = get_or(j, "alpha", w.alpha);
    w.sigma_max = get_or(j, "sigma_max", w.sigma_max);
    w.token_scale = get_or(j, "token_scale", w.token_scale);
    w.common_weight = get_or(j, "common_weight", w.common_weight);
    w.private_weight = get_or(j, "private_weight", w.private_weight);
    w.attribute_strength = get_or(j, "attribute_strength", w.attribute_strength);
    w.calibration_runs = get_or(j, "calibration_runs", w.calibration_runs);
    w.group_names = get_or(j, "groups", w.group_names);
  }
  w.steps = cfg.cbc.steps;

  if (doc.contains("prompt")) {
    const json& p = doc.at("prompt");
    PromptConfig pc;
    for (const auto& t : p.at("tokens")) {
      pc.tokens.push_back({t.at("label").get<std::string>(), get_or(t, "gender_cos", 0.0),
                           get_or(t, "semantic", 0.3)});
    }
    pc.main = p.at("main").get<std::size_t>();
    pc.context = get_or(p, "context", std::vector<std::size_t>{});
    cfg.prompt = std::move(pc);
  }

  if (doc.contains("grid")) {
    const json& g = doc.at("grid");
    GridConfig gc;
    gc.prompt_template.pattern = get_or(g, "pattern", gc.prompt_template.pattern);
    if (g.contains("occupations")) {
      gc.prompt_template.occupations = parse_slot_values(g.at("occupations"), false);
    }
    if (g.contains("colors")) gc.prompt_template.colors = parse_slot_values(g.at("colors"), false);
    if (g.contains("objects")) gc.prompt_template.objects = parse_slot_values(g.at("objects"), true);
    gc.seeds_per_cell = get_or(g, "seeds_per_cell", gc.seeds_per_cell);
    if (gc.seeds_per_cell == 0) throw ConfigError("grid.seeds_per_cell must be >= 1");
    gc.control_occupation = get_or(g, "control_occupation", gc.control_occupation);
    cfg.grid = std::move(gc);
  }
  return cfg;
}

}  // namespace

RunConfig parse_config(std::string_view json_text) {
  try {
    RunConfig cfg = parse_document(json::parse(json_text));
    cfg.cbc.validate();
    cfg.world.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ContractError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

PromptEmbedding build_prompt(const ToyWorld& world, const PromptConfig& prompt) {
  std::vector<Embedding> tokens;
  for (const auto& t : prompt.tokens) {
    tokens.push_back(world.make_token(t.label, t.gender_cos, t.semantic));
  }
  return PromptEmbedding(std::move(tokens), prompt.main, prompt.context);
}

}  // namespace cbc
