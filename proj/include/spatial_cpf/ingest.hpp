#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "spatial_cpf/error.hpp"
#include "spatial_cpf/matrix.hpp"
#include "spatial_cpf/text.hpp"

namespace spatial_cpf {

/// The 15 potentially toxic elements used as clustering features, in the fixed
/// column order used everywhere (feature matrices, exports).
inline constexpr std::array<std::string_view, 15> kElements = {
    "As", "Ba", "Bi", "Co", "Cr", "Cu", "Mn", "Mo", "Ni", "Pb", "Sb", "Sn", "U", "V", "Zn"};

inline constexpr std::size_t kElementCount = kElements.size();

enum class BdlPolicy { half_dl, reject };

struct RawRecord {
  std::string site_id;
  double easting = 0.0;   // ITM metres
  double northing = 0.0;  // ITM metres
  std::vector<double> concentrations;  // mg/kg, aligned with SampleTable::elements
};

struct SampleTable {
  std::vector<std::string> elements;
  std::vector<RawRecord> records;
  std::size_t bdl_substitutions = 0;

  std::size_t size() const noexcept { return records.size(); }

  std::optional<std::size_t> element_index(std::string_view symbol) const {
    for (std::size_t j = 0; j < elements.size(); ++j) {
      if (elements[j] == symbol) return j;
    }
    return std::nullopt;
  }

  /// Removes one element column from the table and every record.
  void drop_element(std::string_view symbol) {
    const auto j = element_index(symbol);
    if (!j) return;
    elements.erase(elements.begin() + static_cast<std::ptrdiff_t>(*j));
    for (auto& r : records) {
      r.concentrations.erase(r.concentrations.begin() + static_cast<std::ptrdiff_t>(*j));
    }
  }
};

/// n x d feature values with named columns. Row i corresponds to record i.
struct FeatureMatrix {
  Matrix values;
  std::vector<std::string> columns;

  std::size_t rows() const noexcept { return values.rows(); }
  std::size_t cols() const noexcept { return values.cols(); }
};

enum class ScalingMethod { zscore, none };

struct ScalingParams {
  ScalingMethod method = ScalingMethod::none;
  std::vector<double> center;
  std::vector<double> scale;

  /// Maps standardized values back to the original units.
  FeatureMatrix invert(const FeatureMatrix& m) const {
    FeatureMatrix out = m;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (std::size_t j = 0; j < m.cols(); ++j) {
        out.values(i, j) = m.values(i, j) * scale[j] + center[j];
      }
    }
    return out;
  }
};

/// Header aliases, keyed by canonical name ("site_id", "easting", "northing" or
/// an element symbol). Matching is case-insensitive.
using ColumnAliases = std::map<std::string, std::vector<std::string>>;

inline ColumnAliases default_column_aliases() {
  ColumnAliases a;
  a["site_id"] = {"site_id", "siteid", "site", "sample_id", "sampleid", "sample", "id",
                  "station_id", "station"};
  a["easting"] = {"easting", "itm_e", "itm_easting", "east", "x", "x_itm", "itm_x"};
  a["northing"] = {"northing", "itm_n", "itm_northing", "north", "y", "y_itm", "itm_y"};
  for (auto sym : kElements) {
    const std::string s(sym);
    a[s] = {s, s + "_mgkg", s + "_mg_kg", s + "_mg/kg", s + " (mg/kg)", s + "_ppm", s + " ppm"};
  }
  return a;
}

struct IngestOptions {
  BdlPolicy bdl_policy = BdlPolicy::half_dl;
  // Merged over default_column_aliases(); entries extend, not replace.
  ColumnAliases extra_aliases;
};

namespace detail {

// Aliases are tried in priority order; the first alias present in the header wins.
inline std::size_t find_column(const std::vector<std::string>& header_lc,
                               const std::string& canonical,
                               const std::vector<std::string>& aliases) {
  for (const auto& alias : aliases) {
    const auto key = text::lower(text::trim(alias));
    std::optional<std::size_t> found;
    for (std::size_t c = 0; c < header_lc.size(); ++c) {
      if (header_lc[c] != key) continue;
      if (found) {
        throw SchemaError("column '" + canonical + "' is ambiguous (header columns " +
                          std::to_string(*found + 1) + " and " + std::to_string(c + 1) + ")");
      }
      found = c;
    }
    if (found) return *found;
  }
  throw SchemaError("missing required column '" + canonical + "'");
}

inline double parse_coordinate(std::string_view field, std::string_view name, std::size_t line) {
  const auto v = text::parse_double(field);
  if (!v) {
    throw ParseError(line, "non-numeric " + std::string(name) + " '" + std::string(field) + "'");
  }
  return *v;
}

inline double parse_concentration(std::string_view field, std::string_view element,
                                  BdlPolicy policy, std::size_t line, std::size_t& bdl_count) {
  const auto f = text::trim(field);
  if (!f.empty() && f.front() == '<') {
    const auto dl = text::parse_double(f.substr(1));
    if (!dl) {
      throw ParseError(line, "malformed detection limit '" + std::string(f) + "' for " +
                                 std::string(element));
    }
    if (policy == BdlPolicy::reject) {
      throw ParseError(line, "below-detection-limit value '" + std::string(f) + "' for " +
                                 std::string(element) + " rejected");
    }
    ++bdl_count;
    return *dl / 2.0;
  }
  const auto v = text::parse_double(f);
  if (!v) {
    throw ParseError(line, "non-numeric concentration '" + std::string(f) + "' for " +
                               std::string(element));
  }
  return *v;
}

}  // namespace detail

/// Reads a G5-style CSV: one header row, then one sample per row. Records keep
/// file order; blank lines are ignored.
inline SampleTable parse_g5_csv(std::istream& in, const IngestOptions& opts = {}) {
  auto aliases = default_column_aliases();
  for (const auto& [key, extra] : opts.extra_aliases) {
    auto& dst = aliases[key];
    dst.insert(dst.end(), extra.begin(), extra.end());
  }

  std::string line;
  std::size_t line_no = 0;
  std::optional<std::vector<std::string>> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    header = text::split_csv_line(line);
    break;
  }
  if (!header) throw SchemaError("empty file");

  std::vector<std::string> header_lc;
  header_lc.reserve(header->size());
  for (const auto& h : *header) header_lc.push_back(text::lower(text::trim(h)));

  const auto site_col = detail::find_column(header_lc, "site_id", aliases["site_id"]);
  const auto east_col = detail::find_column(header_lc, "easting", aliases["easting"]);
  const auto north_col = detail::find_column(header_lc, "northing", aliases["northing"]);
  std::array<std::size_t, kElementCount> elem_cols{};
  for (std::size_t j = 0; j < kElementCount; ++j) {
    const std::string sym(kElements[j]);
    elem_cols[j] = detail::find_column(header_lc, sym, aliases[sym]);
  }

  SampleTable table;
  table.elements.assign(kElements.begin(), kElements.end());
  std::unordered_set<std::string> seen_ids;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    const auto fields = text::split_csv_line(line);
    if (fields.size() != header->size()) {
      throw ParseError(line_no, "expected " + std::to_string(header->size()) + " fields, found " +
                                    std::to_string(fields.size()));
    }
    RawRecord rec;
    rec.site_id = std::string(text::trim(fields[site_col]));
    if (rec.site_id.empty()) throw ParseError(line_no, "empty site id");
    if (!seen_ids.insert(rec.site_id).second) {
      throw ParseError(line_no, "duplicate site id '" + rec.site_id + "'");
    }
    rec.easting = detail::parse_coordinate(fields[east_col], "easting", line_no);
    rec.northing = detail::parse_coordinate(fields[north_col], "northing", line_no);
    rec.concentrations.resize(kElementCount);
    for (std::size_t j = 0; j < kElementCount; ++j) {
      rec.concentrations[j] = detail::parse_concentration(
          fields[elem_cols[j]], kElements[j], opts.bdl_policy, line_no, table.bdl_substitutions);
    }
    table.records.push_back(std::move(rec));
  }
  if (table.records.empty()) throw SchemaError("no records");
  return table;
}

inline SampleTable parse_g5_csv(const std::filesystem::path& path, const IngestOptions& opts = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return parse_g5_csv(in, opts);
}

/// Extracts the 15 element columns, in kElements order, as an n x 15 matrix.
inline FeatureMatrix select_features(const SampleTable& table) {
  std::array<std::size_t, kElementCount> src{};
  for (std::size_t j = 0; j < kElementCount; ++j) {
    const auto idx = table.element_index(kElements[j]);
    if (!idx) throw SchemaError("missing element column '" + std::string(kElements[j]) + "'");
    src[j] = *idx;
  }
  if (table.records.empty()) throw SchemaError("no records");

  FeatureMatrix out{Matrix(table.size(), kElementCount), {kElements.begin(), kElements.end()}};
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& conc = table.records[i].concentrations;
    for (std::size_t j = 0; j < kElementCount; ++j) {
      const double v = conc.at(src[j]);
      if (!std::isfinite(v)) {
        throw DataError("non-finite " + std::string(kElements[j]) + " for site '" +
                        table.records[i].site_id + "'");
      }
      out.values(i, j) = v;
    }
  }
  return out;
}

/// Column-wise z-score (sample standard deviation) or identity scaling.
inline std::pair<FeatureMatrix, ScalingParams> standardize(const FeatureMatrix& m,
                                                          ScalingMethod method) {
  const std::size_t n = m.rows();
  const std::size_t d = m.cols();
  ScalingParams params{method, std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
  if (method == ScalingMethod::none) return {m, params};

  auto column_name = [&](std::size_t j) {
    return j < m.columns.size() ? m.columns[j] : "column " + std::to_string(j);
  };
  FeatureMatrix out = m;
  for (std::size_t j = 0; j < d; ++j) {
    if (n < 2) throw DegenerateColumnError(column_name(j));
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += m.values(i, j);
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dv = m.values(i, j) - mean;
      ss += dv * dv;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0) || !std::isfinite(sd)) throw DegenerateColumnError(column_name(j));
    params.center[j] = mean;
    params.scale[j] = sd;
    for (std::size_t i = 0; i < n; ++i) out.values(i, j) = (m.values(i, j) - mean) / sd;
  }
  return {std::move(out), std::move(params)};
}

}  // namespace spatial_cpf
