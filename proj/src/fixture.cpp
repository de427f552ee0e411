#include "cbc/fixture.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

namespace cbc {
namespace {

using nlohmann::json;

void append_f32le(std::string& out, float value) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
  for (int shift = 0; shift < 32; shift += 8) {
    out.push_back(static_cast<char>((bits >> shift) & 0xFFu));
  }
}

float read_f32le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) {
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return std::bit_cast<float>(bits);
}

}  // namespace

std::vector<const FixtureRow*> Fixture::with_role(std::string_view role) const {
  std::vector<const FixtureRow*> out;
  for (const auto& row : rows) {
    if (row.role == role) out.push_back(&row);
  }
  return out;
}

std::string encode_fixture(const Fixture& fixture) {
  if (fixture.dim == 0) throw FixtureError("fixture dimension must be >= 1");
  json labels = json::array();
  json roles = json::array();
  for (const auto& row : fixture.rows) {
    if (row.values.size() != fixture.dim) {
      throw FixtureError("fixture rows must share dimension " +
                         std::to_string(fixture.dim));
    }
    labels.push_back(row.label);
    roles.push_back(row.role);
  }
  json header = {{"dim", fixture.dim},
                 {"count", fixture.rows.size()},
                 {"dtype", "f32le"},
                 {"labels", labels},
                 {"roles", roles}};

  std::string out(kFixtureMagic);
  out += header.dump();
  out.push_back('\n');
  out.reserve(out.size() + fixture.rows.size() * fixture.dim * 4);
  for (const auto& row : fixture.rows) {
    for (float v : row.values) append_f32le(out, v);
  }
  return out;
}

Fixture decode_fixture(std::string_view bytes) {
  if (bytes.substr(0, kFixtureMagic.size()) != kFixtureMagic) {
    throw FixtureError("bad magic");
  }
  bytes.remove_prefix(kFixtureMagic.size());
  const auto newline = bytes.find('\n');
  if (newline == std::string_view::npos) throw FixtureError("missing header line");

  json header;
  try {
    header = json::parse(bytes.substr(0, newline));
  } catch (const json::exception& e) {
    throw FixtureError(std::string("malformed header: ") + e.what());
  }
  bytes.remove_prefix(newline + 1);

  Fixture fixture;
  std::size_t count = 0;
  std::vector<std::string> labels;
  std::vector<std::string> roles;
  try {
    if (header.at("dtype").get<std::string>() != "f32le") {
      throw FixtureError("unsupported dtype");
    }
    fixture.dim = header.at("dim").get<std::size_t>();
    count = header.at("count").get<std::size_t>();
    labels = header.at("labels").get<std::vector<std::string>>();
    roles = header.value("roles", std::vector<std::string>(count));
  } catch (const json::exception& e) {
    throw FixtureError(std::string("malformed header: ") + e.what());
  }
  if (fixture.dim == 0) throw FixtureError("fixture dimension must be >= 1");
  if (labels.size() != count || roles.size() != count) {
    throw FixtureError("header label/role count mismatch");
  }
  if (bytes.size() != fixture.dim * count * 4) {
    throw FixtureError("payload length mismatch");
  }

  fixture.rows.reserve(count);
  const char* p = bytes.data();
  for (std::size_t r = 0; r < count; ++r) {
    FixtureRow row{std::move(labels[r]), std::move(roles[r]), {}};
    row.values.resize(fixture.dim);
    for (std::size_t c = 0; c < fixture.dim; ++c, p += 4) {
      row.values[c] = read_f32le(p);
    }
    fixture.rows.push_back(std::move(row));
  }
  return fixture;
}

Fixture read_fixture(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FixtureError("cannot open fixture: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return decode_fixture(bytes);
}

void write_fixture(const Fixture& fixture, const std::filesystem::path& path) {
  const std::string bytes = encode_fixture(fixture);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FixtureError("cannot write fixture: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FixtureError("short write: " + path.string());
}

Embedding to_embedding(const FixtureRow& row) {
  return Embedding(std::vector<double>(row.values.begin(), row.values.end()),
                   row.label);
}

FixtureRow to_row(const Embedding& e, std::string role) {
  FixtureRow row{e.label(), std::move(role), {}};
  row.values.reserve(e.dim());
  for (double v : e.values()) row.values.push_back(static_cast<float>(v));
  return row;
}

}  // namespace cbc
