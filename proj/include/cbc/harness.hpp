#pragma once

// Batch orchestration: prompt-template expansion, the occupation x binding
// grid run with paired controller on/off seeds, and report I/O.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbc/config.hpp"
#include "cbc/metrics.hpp"

namespace cbc {

struct PromptSpec {
  std::string text;
  std::string binding;  // everything after the occupation, e.g. "carrying a black briefcase"
  std::optional<SlotValue> occupation;
  std::optional<SlotValue> color;
  std::optional<SlotValue> object;
};

// Cartesian product of the slot lists used by the pattern, occupation-major,
// then object, then color.
std::vector<PromptSpec> expand_templates(const PromptTemplate& tmpl);

// Filler, occupation (main), color, object. The binding tokens are the
// context set and the controlled set.
PromptConfig prompt_for(const PromptSpec& spec);

struct GridRow {
  std::string occupation;
  std::string binding;
  std::size_t n = 0;
  double fd = 0.0;
  double align = 0.0;
  double afs = 0.0;
  bool controller = false;
  bool failed = false;
  std::string error;

  friend bool operator==(const GridRow&, const GridRow&) = default;
};

struct GridResult {
  std::vector<GridRow> rows;
};

// Latent prototype bank for `world` from the config's base seed.
PrototypeBank calibrate_for(const RunConfig& config, const ToyWorld& world);

// Runs every cell with seeds base_seed + s, s < seeds_per_cell, once without
// and once with the controller. Rows come back in cell order, off before on.
GridResult run_grid(const RunConfig& config, std::size_t jobs = 1);

enum class ReportFormat { kCsv, kJsonl };

void emit_report(const GridResult& grid, ReportFormat format, std::ostream& out);
void emit_report(const GridResult& grid, ReportFormat format,
                 const std::filesystem::path& path);
std::vector<GridRow> parse_grid_csv(std::istream& in);

// One generation summary per line, as written by `simulate`.
struct RecordSummary {
  std::uint64_t seed = 0;
  std::size_t group = 0;
  double confidence = 0.0;
  double alignment = 0.0;
  std::size_t injections = 0;
  bool ambiguous = false;

  friend bool operator==(const RecordSummary&, const RecordSummary&) = default;
};

RecordSummary summarize(const GenerationRecord& record);

// Generations of the config's single prompt for seeds base_seed + s.
std::vector<GenerationRecord> simulate(const RunConfig& config, std::size_t seeds,
                                       bool controller, std::size_t jobs = 1);

void write_records(std::span<const RecordSummary> records, std::ostream& out);
std::vector<RecordSummary> read_records(std::istream& in);

MetricReport report_from_records(std::span<const RecordSummary> records,
                                 std::size_t groups = 2);

// The shipped grid: five occupations, seven hat colors and three objects with
// declared toy correlations to the group-0 direction.
GridConfig default_grid();

}  // namespace cbc
