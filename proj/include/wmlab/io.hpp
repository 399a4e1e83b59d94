// =====================================================================
// Persistence: WMS1 snapshot files, lossless CSV series, metadata JSON.
//
// WMS1 layout: [u32 LE header byte count][JSON header][u f64 x n][udot
// f64 x n], all little-endian.  The header carries (k, J, t) and the
// grid descriptor; payload floats round-trip bit-exactly.
// =====================================================================
#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wmlab/common.hpp"
#include "wmlab/grid.hpp"

namespace wmlab {

static_assert(std::endian::native == std::endian::little,
              "snapshot format is little-endian; big-endian hosts unsupported");
static_assert(sizeof(double) == 8);

struct Snapshot {
  int k = 3;
  int J = 1;
  double t = 0;
  FieldPair fields;
};

inline nlohmann::json grid_to_json(const RadialGrid& g) {
  return nlohmann::json{{"kind", g.kind == GridKind::Uniform ? "uniform" : "log"},
                        {"r_min", g.r_min},
                        {"r_max", g.r_max},
                        {"n", g.n}};
}

inline std::shared_ptr<const RadialGrid> grid_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind != "uniform" && kind != "log") throw usage_error("unknown grid kind '" + kind + "'");
  const double r_min = j.at("r_min").get<double>();
  const double r_max = j.at("r_max").get<double>();
  const int n = j.at("n").get<int>();
  if (kind == "uniform") return share(make_uniform_grid(r_min, r_max, n));
  return share(make_log_grid(r_min, r_max, n));
}

inline void wms1_write(const std::string& path, const Snapshot& snap) {
  require(snap.fields.u.grid == snap.fields.udot.grid, "snapshot components must share a grid");
  const RadialGrid& g = *snap.fields.u.grid;
  nlohmann::json header{{"magic", "WMS1"},
                        {"k", snap.k},
                        {"J", snap.J},
                        {"t", snap.t},
                        {"grid", grid_to_json(g)},
                        {"endianness", "little"}};
  const std::string htext = header.dump();
  require(htext.size() < (1u << 24), "snapshot header unreasonably large");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw usage_error("cannot open '" + path + "' for writing");
  const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  out.write(reinterpret_cast<const char*>(snap.fields.u.v.data()),
            static_cast<std::streamsize>(8 * g.n));
  out.write(reinterpret_cast<const char*>(snap.fields.udot.v.data()),
            static_cast<std::streamsize>(8 * g.n));
  if (!out) throw numerical_error("short write to '" + path + "'");
}

inline Snapshot wms1_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw usage_error("cannot open '" + path + "'");
  std::uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 4);
  if (!in || hlen == 0 || hlen >= (1u << 24)) throw usage_error("'" + path + "' is not a WMS1 file");
  std::string htext(hlen, '\0');
  in.read(htext.data(), hlen);
  if (!in) throw usage_error("'" + path + "' truncated in header");
  nlohmann::json header = nlohmann::json::parse(htext, nullptr, false);
  if (header.is_discarded() || header.value("magic", "") != std::string("WMS1"))
    throw usage_error("'" + path + "' is not a WMS1 file");
  require(header.value("endianness", "little") == std::string("little"),
          "WMS1 payload must be little-endian");
  Snapshot snap;
  snap.k = header.at("k").get<int>();
  snap.J = header.at("J").get<int>();
  snap.t = header.at("t").get<double>();
  auto grid = grid_from_json(header.at("grid"));
  snap.fields = FieldPair{ScalarField(grid), ScalarField(grid)};
  in.read(reinterpret_cast<char*>(snap.fields.u.v.data()),
          static_cast<std::streamsize>(8 * grid->n));
  in.read(reinterpret_cast<char*>(snap.fields.udot.v.data()),
          static_cast<std::streamsize>(8 * grid->n));
  if (!in) throw usage_error("'" + path + "' truncated in payload");
  return snap;
}

// %.17g: shortest decimal that reproduces every double exactly on read.
inline std::string format_g17(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct CsvWriter {
  std::ofstream out;

  CsvWriter(const std::string& path, const std::vector<std::string>& columns) : out(path) {
    if (!out) throw usage_error("cannot open '" + path + "' for writing");
    for (std::size_t i = 0; i < columns.size(); ++i)
      out << (i ? "," : "") << columns[i];
    out << "\n";
  }

  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i)
      out << (i ? "," : "") << format_g17(values[i]);
    out << "\n";
  }
};

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw usage_error("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw usage_error("cannot open '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw usage_error("'" + path + "' is not valid JSON");
  return j;
}

}  // namespace wmlab
