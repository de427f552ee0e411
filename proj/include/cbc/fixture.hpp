#pragma once

// Binary embedding fixture format shared by the engine and the extractor.
//
//   "CBCEMB1\n"
//   {"count":N,"dim":D,"dtype":"f32le","labels":[...],"roles":[...]}\n
//   N*D little-endian IEEE-754 float32 values, row-major
//
// Values are stored as float32; the engine computes in float64, so reading a
// fixture widens and writing narrows.

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cbc/embedding.hpp"

namespace cbc {

inline constexpr std::string_view kFixtureMagic = "CBCEMB1\n";

class FixtureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FixtureRow {
  std::string label;
  std::string role;
  std::vector<float> values;
};

struct Fixture {
  std::size_t dim = 0;
  std::vector<FixtureRow> rows;

  std::vector<const FixtureRow*> with_role(std::string_view role) const;
};

std::string encode_fixture(const Fixture& fixture);
Fixture decode_fixture(std::string_view bytes);

Fixture read_fixture(const std::filesystem::path& path);
void write_fixture(const Fixture& fixture, const std::filesystem::path& path);

Embedding to_embedding(const FixtureRow& row);
FixtureRow to_row(const Embedding& e, std::string role);

}  // namespace cbc
