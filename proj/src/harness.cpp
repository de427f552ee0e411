#include "cbc/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace cbc {
namespace {

using nlohmann::json;

constexpr std::string_view kOccupationSlot = "[occupation]";
constexpr std::string_view kVerbSlot = "[verb]";
constexpr std::string_view kColorSlot = "[color]";
constexpr std::string_view kObjectSlot = "[object]";

// Calibration runs draw from a seed range disjoint from the evaluation seeds.
constexpr std::uint64_t kCalibrationSeedOffset = 1'000'000'007ULL;

bool has_slot(const std::string& pattern, std::string_view slot) {
  return pattern.find(slot) != std::string::npos;
}

void replace_all(std::string& text, std::string_view slot, const std::string& value) {
  for (std::size_t pos = text.find(slot); pos != std::string::npos;
       pos = text.find(slot, pos + value.size())) {
    text.replace(pos, slot.size(), value);
  }
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(' ');
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(' ');
  return s.substr(first, last - first + 1);
}

// Optional slot values: a slot absent from the pattern contributes one
// "nothing" entry so the product still has the right shape.
std::vector<std::optional<SlotValue>> slot_choices(const std::string& pattern,
                                                   std::string_view slot,
                                                   const std::vector<SlotValue>& values) {
  if (!has_slot(pattern, slot)) return {std::nullopt};
  if (values.empty()) {
    throw ConfigError("template slot " + std::string(slot) + " has an empty list");
  }
  return {values.begin(), values.end()};
}

std::string format4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// CSV field quoting for bindings that may contain commas.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

// Runs `task(i)` for i < count on `jobs` threads. Exceptions stay inside the
// task; the caller records them per item.
template <typename Task>
void parallel_for(std::size_t count, std::size_t jobs, Task task) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(jobs);
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) task(i);
    });
  }
}

GridRow run_cell(const PromptSpec& spec, const RunConfig& config, const ToyWorld& world,
                 const ControlSetup& setup, bool controller) {
  GridRow row;
  row.occupation = spec.occupation ? spec.occupation->name : "";
  row.binding = spec.binding;
  row.controller = controller;
  const std::size_t n = config.grid->seeds_per_cell;
  try {
    const PromptConfig pc = prompt_for(spec);
    const PromptEmbedding prompt = build_prompt(world, pc);
    ControlSetup cell_setup = setup;
    cell_setup.config.controlled_tokens = pc.context;
    if (config.grid->control_occupation) cell_setup.config.controlled_tokens.push_back(pc.main);
    LabelBatch batch{{}, world.params().group_names.size()};
    std::vector<double> alignment;
    for (std::size_t s = 0; s < n; ++s) {
      const GenerationRecord rec =
          generate(prompt, world, config.seed + s, controller ? &cell_setup : nullptr);
      batch.labels.push_back(rec.attribute.group);
      alignment.push_back(rec.alignment);
    }
    const MetricReport report = make_report(batch, alignment);
    row.n = report.n;
    row.fd = report.fd;
    row.align = report.vqa;
    row.afs = report.afs;
  } catch (const std::exception& e) {
    row.failed = true;
    row.error = e.what();
  }
  return row;
}

}  // namespace

std::vector<PromptSpec> expand_templates(const PromptTemplate& tmpl) {
  const std::string& pattern = tmpl.pattern;
  const auto occupations = slot_choices(pattern, kOccupationSlot, tmpl.occupations);
  const auto objects = slot_choices(pattern, kObjectSlot, tmpl.objects);
  const auto colors = slot_choices(pattern, kColorSlot, tmpl.colors);
  const bool needs_verb = has_slot(pattern, kVerbSlot);
  if (needs_verb && !has_slot(pattern, kObjectSlot)) {
    throw ConfigError("template uses [verb] without [object]");
  }

  std::vector<PromptSpec> out;
  out.reserve(occupations.size() * objects.size() * colors.size());
  for (const auto& occ : occupations) {
    for (const auto& obj : objects) {
      if (needs_verb && obj->verb.empty()) {
        throw ConfigError("object \"" + obj->name + "\" has no verb");
      }
      for (const auto& col : colors) {
        std::string text = pattern;
        if (obj) replace_all(text, kObjectSlot, obj->name);
        if (col) replace_all(text, kColorSlot, col->name);
        if (needs_verb) replace_all(text, kVerbSlot, obj->verb);
        std::string binding;
        if (const auto cut = text.find(kOccupationSlot); cut != std::string::npos) {
          binding = trim(text.substr(cut + kOccupationSlot.size()));
        }
        if (occ) replace_all(text, kOccupationSlot, occ->name);
        out.push_back({std::move(text), std::move(binding), occ, col, obj});
      }
    }
  }
  return out;
}

PromptConfig prompt_for(const PromptSpec& spec) {
  PromptConfig pc;
  pc.tokens.push_back({"a photo of a", 0.0, 0.1});
  pc.tokens.push_back({spec.occupation ? spec.occupation->name : "person",
                       spec.occupation ? spec.occupation->gender_cos : 0.0, 1.0});
  pc.main = 1;
  if (spec.color) {
    pc.context.push_back(pc.tokens.size());
    pc.tokens.push_back({spec.color->name, spec.color->gender_cos, 0.3});
  }
  if (spec.object) {
    pc.context.push_back(pc.tokens.size());
    pc.tokens.push_back({spec.object->name, spec.object->gender_cos, 0.3});
  }
  return pc;
}

PrototypeBank calibrate_for(const RunConfig& config, const ToyWorld& world) {
  return calibrate_latent_bank(world, config.seed + kCalibrationSeedOffset);
}

GridResult run_grid(const RunConfig& config, std::size_t jobs) {
  if (!config.grid) throw ConfigError("config has no grid section");
  if (config.grid->seeds_per_cell == 0) throw ConfigError("grid.seeds_per_cell must be >= 1");
  const std::vector<PromptSpec> cells = expand_templates(config.grid->prompt_template);

  const ToyWorld world(config.world);
  ControlSetup setup;
  setup.config = config.cbc;
  setup.attrs = std::make_shared<const AttributeSet>(world.attributes());
  setup.bank = std::make_shared<const PrototypeBank>(calibrate_for(config, world));

  GridResult result;
  result.rows.resize(cells.size() * 2);
  parallel_for(result.rows.size(), jobs, [&](std::size_t i) {
    result.rows[i] = run_cell(cells[i / 2], config, world, setup, i % 2 == 1);
  });
  return result;
}

void emit_report(const GridResult& grid, ReportFormat format, std::ostream& out) {
  if (format == ReportFormat::kCsv) {
    out << "occupation,binding,n,fd,align,afs,controller\n";
    for (const auto& r : grid.rows) {
      out << csv_field(r.occupation) << ',' << csv_field(r.binding) << ',' << r.n << ',';
      if (r.failed) {
        out << "failed,failed,failed,";
      } else {
        out << format4(r.fd) << ',' << format4(r.align) << ',' << format4(r.afs) << ',';
      }
      out << (r.controller ? "on" : "off") << '\n';
    }
    return;
  }
  for (const auto& r : grid.rows) {
    json j = {{"occupation", r.occupation}, {"binding", r.binding}, {"n", r.n},
              {"controller", r.controller ? "on" : "off"}};
    if (r.failed) {
      j["failed"] = true;
      j["error"] = r.error;
    } else {
      j["fd"] = r.fd;
      j["align"] = r.align;
      j["afs"] = r.afs;
    }
    out << j.dump() << '\n';
  }
}

void emit_report(const GridResult& grid, ReportFormat format,
                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write report: " + path.string());
  emit_report(grid, format, out);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<GridRow> parse_grid_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "occupation,binding,n,fd,align,afs,controller") {
    throw std::runtime_error("grid csv: unexpected header");
  }
  std::vector<GridRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 7) throw std::runtime_error("grid csv: expected 7 fields: " + line);
    GridRow r;
    r.occupation = f[0];
    r.binding = f[1];
    r.n = std::stoul(f[2]);
    if (f[3] == "failed") {
      r.failed = true;
    } else {
      r.fd = std::stod(f[3]);
      r.align = std::stod(f[4]);
      r.afs = std::stod(f[5]);
    }
    r.controller = f[6] == "on";
    rows.push_back(std::move(r));
  }
  return rows;
}

RecordSummary summarize(const GenerationRecord& record) {
  return {record.seed,      record.attribute.group,      record.attribute.confidence,
          record.alignment, record.injection_log.size(), record.attribute.ambiguous};
}

std::vector<GenerationRecord> simulate(const RunConfig& config, std::size_t seeds,
                                       bool controller, std::size_t jobs) {
  if (!config.prompt) throw ConfigError("config has no prompt section");
  if (seeds == 0) throw ConfigError("seed count must be >= 1");
  const ToyWorld world(config.world);
  const PromptEmbedding prompt = build_prompt(world, *config.prompt);

  std::optional<ControlSetup> setup;
  if (controller) {
    setup.emplace();
    setup->config = config.cbc;
    if (setup->config.controlled_tokens.empty()) {
      setup->config.controlled_tokens = prompt.context();
    }
    setup->attrs = std::make_shared<const AttributeSet>(world.attributes());
    setup->bank = std::make_shared<const PrototypeBank>(calibrate_for(config, world));
  }

  std::vector<std::optional<GenerationRecord>> slots(seeds);
  std::vector<std::string> errors(seeds);
  parallel_for(seeds, jobs, [&](std::size_t s) {
    try {
      slots[s] = generate(prompt, world, config.seed + s, setup ? &*setup : nullptr);
    } catch (const std::exception& e) {
      errors[s] = e.what();
    }
  });
  std::vector<GenerationRecord> out;
  out.reserve(seeds);
  for (std::size_t s = 0; s < seeds; ++s) {
    if (!slots[s]) {
      throw std::runtime_error("seed " + std::to_string(config.seed + s) + ": " + errors[s]);
    }
    out.push_back(std::move(*slots[s]));
  }
  return out;
}

void write_records(std::span<const RecordSummary> records, std::ostream& out) {
  for (const auto& r : records) {
    const json j = {{"seed", r.seed},           {"group", r.group},
                    {"confidence", r.confidence}, {"alignment", r.alignment},
                    {"injections", r.injections}, {"ambiguous", r.ambiguous}};
    out << j.dump() << '\n';
  }
}

std::vector<RecordSummary> read_records(std::istream& in) {
  std::vector<RecordSummary> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("seed").get<std::uint64_t>(), j.at("group").get<std::size_t>(),
                     j.at("confidence").get<double>(), j.at("alignment").get<double>(),
                     j.value("injections", std::size_t{0}), j.value("ambiguous", false)});
    } catch (const json::exception& e) {
      throw std::runtime_error("records line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

MetricReport report_from_records(std::span<const RecordSummary> records, std::size_t groups) {
  LabelBatch batch{{}, groups};
  std::vector<double> alignment;
  for (const auto& r : records) {
    batch.labels.push_back(r.group);
    alignment.push_back(r.alignment);
  }
  return make_report(batch, alignment);
}

GridConfig default_grid() {
  GridConfig g;
  g.prompt_template.pattern = "a photo of a [occupation] [verb] a [color] [object]";
  g.prompt_template.occupations = {{"assistant", 0.3, ""},
                                   {"CEO", -0.3, ""},
                                   {"mechanic", -0.4, ""},
                                   {"nurse", 0.4, ""},
                                   {"secretary", 0.4, ""}};
  g.prompt_template.colors = {{"blue", -0.1, ""},  {"red", 0.1, ""},    {"green", 0.0, ""},
                              {"orange", -0.2, ""}, {"black", -0.1, ""}, {"white", 0.0, ""},
                              {"pink", 0.5, ""}};
  g.prompt_template.objects = {{"hat", -0.1, "wearing"},
                               {"scarf", 0.4, "wearing"},
                               {"briefcase", -0.3, "carrying"}};
  g.seeds_per_cell = 50;
  return g;
}

}  // namespace cbc
