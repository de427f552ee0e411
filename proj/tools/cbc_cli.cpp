// Command-line front end for the bias-control engine.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cbc/bias_scoring.hpp"
#include "cbc/config.hpp"
#include "cbc/control.hpp"
#include "cbc/fixture.hpp"
#include "cbc/harness.hpp"
#include "cbc/latent_prototypes.hpp"
#include "cbc/metrics.hpp"
#include "cbc/toy_diffusion.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t jobs = 1;
};

cbc::RunConfig load_run_config(const Globals& g) {
  cbc::RunConfig cfg = g.config_path.empty() ? cbc::parse_config("{}")
                                             : cbc::load_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

// Writes to --out when given, stdout otherwise.
void emit_text(const Globals& g, const std::string& text) {
  if (g.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(g.out, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + g.out);
  out << text;
}

std::string require_out(const Globals& g, const char* verb) {
  if (g.out.empty()) throw cbc::ConfigError(std::string(verb) + " requires --out");
  return g.out;
}

// Prompt fixture: every row is a token in order.
std::vector<cbc::Embedding> read_tokens(const std::string& path) {
  const cbc::Fixture f = cbc::read_fixture(path);
  std::vector<cbc::Embedding> tokens;
  for (const auto& row : f.rows) tokens.push_back(cbc::to_embedding(row));
  return tokens;
}

// Attribute fixture: rows with role "attribute" give s_k (label = group name);
// rows with role "prototype" give p_k. Without prototype rows p_k = s_k.
cbc::AttributeSet read_attributes(const std::string& path) {
  const cbc::Fixture f = cbc::read_fixture(path);
  std::vector<std::string> names;
  std::vector<cbc::Embedding> attrs;
  std::vector<cbc::Embedding> protos;
  for (const auto* row : f.with_role("attribute")) {
    names.push_back(row->label);
    attrs.push_back(cbc::to_embedding(*row));
  }
  for (const auto* row : f.with_role("prototype")) protos.push_back(cbc::to_embedding(*row));
  if (protos.empty()) protos = attrs;
  return cbc::AttributeSet(std::move(names), std::move(attrs), std::move(protos));
}

cbc::Fixture attributes_fixture(const cbc::AttributeSet& attrs) {
  cbc::Fixture f;
  f.dim = attrs.dim();
  for (std::size_t k = 0; k < attrs.group_count(); ++k) {
    f.rows.push_back(cbc::to_row(attrs.attribute(k).with_label(attrs.group_names()[k]),
                                 "attribute"));
  }
  for (std::size_t k = 0; k < attrs.group_count(); ++k) {
    f.rows.push_back(cbc::to_row(attrs.prototype(k).with_label(attrs.group_names()[k]),
                                 "prototype"));
  }
  return f;
}

cbc::Fixture matrix_fixture(const cbc::Matrix& m) {
  cbc::Fixture f;
  f.dim = m.cols();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    f.rows.push_back(cbc::to_row(
        cbc::Embedding(std::vector<double>(row.begin(), row.end()), "row=" + std::to_string(r)),
        "projection"));
  }
  return f;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

struct PromptArgs {
  std::string prompt_fixture;
  std::string attrs_fixture;
  std::size_t main = 0;
  std::vector<std::size_t> context;
  double tau = cbc::kDefaultTau;
  double pi = cbc::kDefaultPi;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--prompt-fixture", prompt_fixture, "Token embedding fixture")->required();
    cmd->add_option("--attrs-fixture,--attrs", attrs_fixture, "Attribute fixture")->required();
    cmd->add_option("--main", main, "Index of the main object token");
    cmd->add_option("--context", context, "Selected context token indices")->delimiter(',');
    cmd->add_option("--tau", tau, "Softmax temperature");
    cmd->add_option("--pi", pi, "Balance target");
  }

  cbc::PromptEmbedding prompt() const {
    return cbc::PromptEmbedding(read_tokens(prompt_fixture), main, context);
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Bias-control engine for compositional prompts"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "Run configuration (JSON)");
  app.add_option("--seed", g.seed, "Base seed (overrides the config)");
  app.add_option("--out", g.out, "Output path");
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);

  PromptArgs ba_args;
  auto* ba = app.add_subcommand("ba-score", "Per-group adherence and deviation of a prompt");
  ba_args.add_to(ba);

  PromptArgs map_args;
  auto* simmap = app.add_subcommand("sim-map", "Token x group cosine table as CSV");
  map_args.add_to(simmap);

  PromptArgs dec_args;
  std::vector<std::size_t> dec_tokens;
  std::string target_group = "auto";
  auto* decouple = app.add_subcommand("decouple", "Project tokens off the attribute direction");
  dec_args.add_to(decouple);
  decouple->add_option("--tokens", dec_tokens, "Tokens to decouple")->delimiter(',')->required();
  decouple->add_option("--target-group", target_group, "auto or a group index");

  auto* protos = app.add_subcommand("protos", "Latent prototype banks");
  protos->require_subcommand(1);
  std::string samples_path;
  bool contrastive = false;
  std::string projection_out;
  cbc::ContrastiveConfig ccfg;
  auto* fit = protos->add_subcommand("fit", "Per-step class centres from labelled latents");
  fit->add_option("--samples", samples_path, "Latent sample fixture")->required();
  fit->add_flag("--contrastive", contrastive, "Train a projection first");
  fit->add_option("--projection-out", projection_out, "Where to write the projection");
  fit->add_option("--projection-dim", ccfg.projection_dim);
  fit->add_option("--iterations", ccfg.iterations);
  fit->add_option("--learning-rate", ccfg.learning_rate);
  fit->add_option("--temperature", ccfg.temperature);
  auto* sample = protos->add_subcommand("sample", "Calibration latents of the toy world");

  std::size_t seeds = 200;
  std::string controller = "off";
  auto* sim = app.add_subcommand("simulate", "Toy generations of the configured prompt");
  sim->add_option("--seeds", seeds, "Number of seeds")->check(CLI::PositiveNumber);
  sim->add_option("--controller", controller, "on or off")->check(CLI::IsMember({"on", "off"}));

  std::string records_path;
  auto* metrics = app.add_subcommand("metrics", "FD, alignment and AFS of simulate records");
  metrics->add_option("--records", records_path, "Records JSONL")->required();

  std::string format = "csv";
  auto* grid = app.add_subcommand("grid", "Occupation x binding grid, controller off and on");
  grid->add_option("--format", format, "csv or jsonl")->check(CLI::IsMember({"csv", "jsonl"}));

  auto* exporter = app.add_subcommand("export", "Write the toy prompt and attribute fixtures");
  exporter->add_option("--dir", g.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (*ba) {
    const auto result = cbc::adherence_scores(ba_args.prompt(),
                                              read_attributes(ba_args.attrs_fixture),
                                              ba_args.tau, ba_args.pi);
    const json j = {{"per_group", result.per_group},
                    {"ba_score", result.ba_score},
                    {"dominant_group", result.dominant_group},
                    {"tau", result.tau},
                    {"pi", result.pi}};
    emit_text(g, j.dump() + "\n");
  } else if (*simmap) {
    const auto prompt = map_args.prompt();
    const auto attrs = read_attributes(map_args.attrs_fixture);
    const auto map = cbc::similarity_map(prompt, attrs);
    std::string text = "token,group,cosine\n";
    for (std::size_t i = 0; i < map.token_labels.size(); ++i) {
      for (std::size_t k = 0; k < map.group_names.size(); ++k) {
        const std::string label = map.token_labels[i].empty() ? std::to_string(i)
                                                              : map.token_labels[i];
        text += label + "," + map.group_names[k] + ",";
        if (map.cosines[i][k]) text += fmt(*map.cosines[i][k]);
        text += "\n";
      }
    }
    emit_text(g, text);
  } else if (*decouple) {
    const auto prompt = dec_args.prompt();
    const auto attrs = read_attributes(dec_args.attrs_fixture);
    std::size_t target = 0;
    if (target_group == "auto") {
      target = cbc::adherence_scores(prompt, attrs, dec_args.tau, dec_args.pi).dominant_group;
    } else {
      try {
        target = std::stoul(target_group);
      } catch (const std::exception&) {
        throw cbc::ConfigError("--target-group must be auto or an index");
      }
    }
    const auto dec = cbc::decouple_tokens(prompt, attrs, target, dec_tokens);
    cbc::Fixture f;
    f.dim = prompt.dim();
    for (std::size_t i = 0; i < dec.tokens.size(); ++i) {
      const bool decoupled = dec.find(i) != nullptr;
      f.rows.push_back(cbc::to_row(dec.tokens[i], decoupled ? "c_star" : "token"));
    }
    for (const auto& tr : dec.residuals) {
      for (std::size_t k = 0; k < tr.per_group.size(); ++k) {
        f.rows.push_back(cbc::to_row(tr.per_group[k].with_label(prompt.token(tr.token).label()),
                                     "residual:k=" + std::to_string(k)));
      }
    }
    cbc::write_fixture(f, require_out(g, "decouple"));
  } else if (*fit) {
    const auto samples = cbc::samples_from_fixture(cbc::read_fixture(samples_path));
    std::optional<cbc::Matrix> projection;
    if (contrastive) {
      ccfg.seed = g.seed.value_or(ccfg.seed);
      const auto trained = cbc::train_contrastive(samples, ccfg);
      for (const auto& w : trained.warnings) std::cerr << "warning: " << w << "\n";
      projection = trained.projection;
    }
    const std::string out = require_out(g, "protos fit");
    cbc::write_fixture(cbc::bank_to_fixture(cbc::compute_prototypes(samples, projection)), out);
    if (projection) {
      cbc::write_fixture(matrix_fixture(*projection),
                         projection_out.empty() ? out + ".projection" : projection_out);
    }
  } else if (*sample) {
    const auto cfg = load_run_config(g);
    const cbc::ToyWorld world(cfg.world);
    cbc::write_fixture(cbc::samples_to_fixture(cbc::calibration_samples(world, cfg.seed)),
                       require_out(g, "protos sample"));
  } else if (*sim) {
    const auto cfg = load_run_config(g);
    const auto records = cbc::simulate(cfg, seeds, controller == "on", g.jobs);
    std::vector<cbc::RecordSummary> summaries;
    for (const auto& r : records) summaries.push_back(cbc::summarize(r));
    std::ostringstream out;
    cbc::write_records(summaries, out);
    emit_text(g, out.str());
  } else if (*metrics) {
    std::ifstream in(records_path);
    if (!in) throw std::runtime_error("cannot read " + records_path);
    const auto records = cbc::read_records(in);
    const auto report = cbc::report_from_records(records);
    const json j = {{"fd", report.fd},   {"vqa", report.vqa},       {"afs", report.afs},
                    {"n", report.n},     {"counts", report.counts}, {"proportions", report.proportions}};
    emit_text(g, j.dump(2) + "\n");
  } else if (*grid) {
    auto cfg = load_run_config(g);
    if (!cfg.grid) cfg.grid = cbc::default_grid();
    const auto result = cbc::run_grid(cfg, g.jobs);
    std::ostringstream out;
    cbc::emit_report(result, format == "csv" ? cbc::ReportFormat::kCsv : cbc::ReportFormat::kJsonl,
                     out);
    Globals target = g;
    if (!g.out.empty() && fs::is_directory(g.out)) {
      target.out = (fs::path(g.out) / ("grid." + format)).string();
    }
    emit_text(target, out.str());
    for (const auto& row : result.rows) {
      if (row.failed) std::cerr << "cell failed: " << row.occupation << " / " << row.binding
                                << ": " << row.error << "\n";
    }
  } else if (*exporter) {
    const auto cfg = load_run_config(g);
    if (!cfg.prompt) throw cbc::ConfigError("export needs a prompt section");
    const fs::path dir = require_out(g, "export");
    fs::create_directories(dir);
    const cbc::ToyWorld world(cfg.world);
    const auto prompt = cbc::build_prompt(world, *cfg.prompt);
    cbc::Fixture pf;
    pf.dim = prompt.dim();
    for (const auto& t : prompt.tokens()) pf.rows.push_back(cbc::to_row(t, "token"));
    cbc::write_fixture(pf, dir / "prompt.fixture");
    cbc::write_fixture(attributes_fixture(world.attributes()), dir / "attrs.fixture");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const cbc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const cbc::ContractError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
