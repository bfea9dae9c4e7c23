#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spatial_cpf/error.hpp"
#include "spatial_cpf/geodesy.hpp"
#include "spatial_cpf/ingest.hpp"
#include "spatial_cpf/metrics.hpp"
#include "spatial_cpf/text.hpp"

// Readers and writers for every file the pipeline produces. Doubles are
// written in shortest round-trip form, so re-reading an intermediate file
// reproduces the in-memory values bit for bit.
namespace spatial_cpf::io {

/// Header plus data rows of a CSV file; `lines` holds 1-based file lines.
struct CsvDocument {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;

  std::optional<std::size_t> column(std::string_view name) const {
    const auto key = text::lower(name);
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (text::lower(text::trim(header[c])) == key) return c;
    }
    return std::nullopt;
  }

  std::size_t require_column(std::string_view name) const {
    const auto c = column(name);
    if (!c) throw SchemaError("missing required column '" + std::string(name) + "'");
    return *c;
  }
};

inline CsvDocument read_csv(std::istream& in) {
  CsvDocument doc;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    auto fields = text::split_csv_line(line);
    if (!have_header) {
      doc.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != doc.header.size()) {
      throw ParseError(line_no, "expected " + std::to_string(doc.header.size()) +
                                    " fields, found " + std::to_string(fields.size()));
    }
    doc.rows.push_back(std::move(fields));
    doc.lines.push_back(line_no);
  }
  if (!have_header) throw SchemaError("empty file");
  return doc;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes `content` to `path`, creating parent directories.
inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << content;
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Sample tables (optionally with WGS84 coordinates)

inline std::string samples_csv(const SampleTable& table,
                               std::span<const geodesy::GeoCoord> coords = {}) {
  std::string out = "site_id,easting,northing";
  if (!coords.empty()) out += ",latitude,longitude";
  for (const auto& e : table.elements) out += "," + e;
  out += "\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& r = table.records[i];
    out += text::quote_csv(r.site_id) + "," + text::format_double(r.easting) + "," +
           text::format_double(r.northing);
    if (!coords.empty()) {
      out += "," + text::format_double(coords[i].latitude) + "," +
             text::format_double(coords[i].longitude);
    }
    for (const double v : r.concentrations) out += "," + text::format_double(v);
    out += "\n";
  }
  return out;
}

struct ProjectedTable {
  SampleTable table;
  std::vector<geodesy::GeoCoord> coords;
};

/// Reads a samples file written by samples_csv() with coordinates.
inline ProjectedTable read_projected_csv(const std::filesystem::path& path) {
  const auto content = read_file(path);
  std::istringstream a(content), b(content);
  ProjectedTable out{parse_g5_csv(a), {}};
  const auto doc = read_csv(b);
  const auto lat = doc.require_column("latitude");
  const auto lon = doc.require_column("longitude");
  out.coords.reserve(doc.rows.size());
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    const auto la = text::parse_double(doc.rows[r][lat]);
    const auto lo = text::parse_double(doc.rows[r][lon]);
    if (!la || !lo) throw ParseError(doc.lines[r], "non-numeric latitude/longitude");
    out.coords.push_back({*la, *lo});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-sample labelling

struct LabelRow {
  std::string site_id;
  int cluster_label = -1;
  double log_density = 0.0;
  double omega = 0.0;
  std::size_t component_id = 0;
  std::optional<double> anomaly_score;  // only for samples scored by the isolation forest
  bool iforest_flag = false;
};

inline std::string labels_csv(std::span<const LabelRow> rows, bool with_scores) {
  std::string out = "site_id,cluster_label,log_density,omega,component_id";
  if (with_scores) out += ",anomaly_score,iforest_flag";
  out += "\n";
  for (const auto& r : rows) {
    out += text::quote_csv(r.site_id) + "," + std::to_string(r.cluster_label) + "," +
           text::format_double(r.log_density) + "," + text::format_double(r.omega) + "," +
           std::to_string(r.component_id);
    if (with_scores) {
      out += "," + (r.anomaly_score ? text::format_double(*r.anomaly_score) : std::string()) +
             "," + (r.iforest_flag ? "1" : "0");
    }
    out += "\n";
  }
  return out;
}

inline std::vector<LabelRow> read_labels_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  const auto doc = read_csv(in);
  const auto c_site = doc.require_column("site_id");
  const auto c_label = doc.require_column("cluster_label");
  const auto c_ld = doc.require_column("log_density");
  const auto c_omega = doc.require_column("omega");
  const auto c_comp = doc.require_column("component_id");
  const auto c_score = doc.column("anomaly_score");
  const auto c_flag = doc.column("iforest_flag");

  std::vector<LabelRow> rows;
  rows.reserve(doc.rows.size());
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    const auto& f = doc.rows[r];
    const auto line = doc.lines[r];
    LabelRow row;
    row.site_id = std::string(text::trim(f[c_site]));
    const auto label = text::parse_double(f[c_label]);
    const auto ld = text::parse_double(f[c_ld]);
    const auto om = text::parse_extended_double(f[c_omega]);
    const auto comp = text::parse_double(f[c_comp]);
    if (!label || !ld || !om || !comp) throw ParseError(line, "malformed labelling row");
    row.cluster_label = static_cast<int>(*label);
    row.log_density = *ld;
    row.omega = *om;
    row.component_id = static_cast<std::size_t>(*comp);
    if (c_score && !text::trim(f[*c_score]).empty()) {
      row.anomaly_score = text::parse_double(f[*c_score]);
      if (!row.anomaly_score) throw ParseError(line, "malformed anomaly_score");
    }
    if (c_flag) row.iforest_flag = text::trim(f[*c_flag]) == "1";
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// GeoJSON (RFC 7946): positions are [longitude, latitude].

inline std::string geojson(std::span<const LabelRow> rows,
                           std::span<const geodesy::GeoCoord> coords) {
  if (rows.size() != coords.size()) {
    throw ParameterError("GeoJSON export: " + std::to_string(rows.size()) + " labels but " +
                         std::to_string(coords.size()) + " coordinates");
  }
  using nlohmann::ordered_json;
  ordered_json features = ordered_json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    ordered_json props;
    props["site_id"] = r.site_id;
    props["cluster"] = r.cluster_label;
    props["log_density"] = r.log_density;
    if (r.anomaly_score) props["anomaly_score"] = *r.anomaly_score;
    props["iforest_flag"] = r.iforest_flag;
    features.push_back(ordered_json{
        {"type", "Feature"},
        {"geometry",
         {{"type", "Point"}, {"coordinates", {coords[i].longitude, coords[i].latitude}}}},
        {"properties", std::move(props)}});
  }
  const ordered_json doc{{"type", "FeatureCollection"}, {"features", std::move(features)}};
  return doc.dump() + "\n";
}

// ---------------------------------------------------------------------------
// Cluster summaries

namespace detail {

inline void append_box_fields(std::vector<std::pair<std::string, double>>& out,
                              const std::string& prefix, const stats::BoxStats& b) {
  out.emplace_back(prefix + "count", static_cast<double>(b.count));
  out.emplace_back(prefix + "min", b.min);
  out.emplace_back(prefix + "q1", b.q1);
  out.emplace_back(prefix + "median", b.median);
  out.emplace_back(prefix + "q3", b.q3);
  out.emplace_back(prefix + "max", b.max);
  out.emplace_back(prefix + "iqr", b.iqr);
  out.emplace_back(prefix + "whisker_low", b.whisker_low);
  out.emplace_back(prefix + "whisker_high", b.whisker_high);
}

}  // namespace detail

/// Long format: one row per (cluster, element, statistic).
inline std::string summary_csv(const metrics::ClusterSummary& s) {
  std::string out = "cluster,element,statistic,value\n";
  std::vector<std::pair<std::string, double>> fields;
  for (const auto& e : s.entries) {
    fields.clear();
    detail::append_box_fields(fields, "", e.raw);
    if (e.log10) detail::append_box_fields(fields, "log10_", *e.log10);
    for (const auto& [name, value] : fields) {
      out += std::to_string(e.cluster) + "," + e.element + "," + name + "," +
             text::format_double(value) + "\n";
    }
  }
  return out;
}

/// One row per (cluster, element) box: quartiles, whiskers and the
/// semicolon-separated points beyond the whiskers.
inline std::string plot_data_csv(const metrics::ClusterSummary& s) {
  const bool with_log = !s.entries.empty() && s.entries.front().log10.has_value();
  std::string out = "cluster,element,count,q1,median,q3,whisker_low,whisker_high,fliers";
  if (with_log) out += ",log10_q1,log10_median,log10_q3,log10_whisker_low,log10_whisker_high,log10_fliers";
  out += "\n";
  auto box = [](const stats::BoxStats& b) {
    std::string f;
    for (std::size_t i = 0; i < b.fliers.size(); ++i) {
      if (i) f += ";";
      f += text::format_double(b.fliers[i]);
    }
    return text::format_double(b.q1) + "," + text::format_double(b.median) + "," +
           text::format_double(b.q3) + "," + text::format_double(b.whisker_low) + "," +
           text::format_double(b.whisker_high) + "," + f;
  };
  for (const auto& e : s.entries) {
    out += std::to_string(e.cluster) + "," + e.element + "," + std::to_string(e.raw.count) + "," +
           box(e.raw);
    if (with_log) out += "," + (e.log10 ? box(*e.log10) : std::string(",,,,,"));
    out += "\n";
  }
  return out;
}

}  // namespace spatial_cpf::io
