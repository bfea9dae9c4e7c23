#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spatial_cpf/cpf.hpp"
#include "spatial_cpf/error.hpp"
#include "spatial_cpf/geodesy.hpp"
#include "spatial_cpf/graph.hpp"
#include "spatial_cpf/iforest.hpp"
#include "spatial_cpf/ingest.hpp"
#include "spatial_cpf/io.hpp"
#include "spatial_cpf/metrics.hpp"

namespace spatial_cpf::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

enum class GeoMetric { haversine, euclidean_itm, euclidean_degrees };
enum class FeatureSpace { scaled, raw };

/// Names of the files written under PipelineConfig::output_dir.
struct OutputPaths {
  fs::path samples = "samples.csv";
  fs::path projected = "projected.csv";
  fs::path adjacency = "geo_adjacency.bin";
  fs::path labels = "labels.csv";
  fs::path refined = "refined.csv";
  fs::path summary = "summary.csv";
  fs::path plot_data = "plot_data.csv";
  fs::path geojson = "clusters.geojson";
  fs::path report = "report.json";
};

struct IforestSettings {
  std::size_t n_trees = 100;
  std::size_t subsample_size = 256;
  double contamination = 0.30;
  FeatureSpace features = FeatureSpace::scaled;
};

struct PipelineConfig {
  fs::path input;
  fs::path output_dir = "out";
  BdlPolicy bdl_policy = BdlPolicy::half_dl;
  ScalingMethod scaling = ScalingMethod::zscore;
  GeoMetric geo_metric = GeoMetric::haversine;
  geodesy::TmProjection projection = geodesy::TmProjection::itm();
  cpf::CpfParams cpf;
  IforestSettings iforest;
  std::uint64_t seed = 0;
  bool ch_include_outliers = false;
  FeatureSpace ch_features = FeatureSpace::scaled;
  bool log10_export = true;
  ColumnAliases column_aliases;
  OutputPaths outputs;

  fs::path out(const fs::path& name) const { return name.is_absolute() ? name : output_dir / name; }

  void validate() const {
    cpf.validate();
    projection.validate();
    if (iforest.n_trees == 0) throw ParameterError("iforest.n_trees must be at least 1");
    if (iforest.subsample_size < 2) throw ParameterError("iforest.subsample_size must be at least 2");
    if (!(iforest.contamination > 0.0 && iforest.contamination < 1.0)) {
      throw ParameterError("iforest.contamination must lie in (0, 1)");
    }
  }
};

namespace detail {

template <typename Enum>
Enum parse_enum(const json& j, const char* key, std::initializer_list<std::pair<const char*, Enum>> options) {
  const auto s = j.get<std::string>();
  for (const auto& [name, value] : options) {
    if (s == name) return value;
  }
  std::string allowed;
  for (const auto& [name, _] : options) allowed += std::string(allowed.empty() ? "" : ", ") + name;
  throw SchemaError(std::string("config key '") + key + "': unknown value '" + s + "' (expected " +
                    allowed + ")");
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const auto* k : known) ok = ok || key == k;
    if (!ok) throw SchemaError("unknown config key '" + where + key + "'");
  }
}

inline const char* name_of(BdlPolicy p) { return p == BdlPolicy::half_dl ? "half_dl" : "reject"; }
inline const char* name_of(ScalingMethod m) { return m == ScalingMethod::zscore ? "zscore" : "none"; }
inline const char* name_of(FeatureSpace f) { return f == FeatureSpace::scaled ? "scaled" : "raw"; }
inline const char* name_of(GeoMetric m) {
  switch (m) {
    case GeoMetric::haversine: return "haversine";
    case GeoMetric::euclidean_itm: return "euclidean_itm";
    case GeoMetric::euclidean_degrees: return "euclidean_degrees";
  }
  return "?";
}

}  // namespace detail

/// Parses a JSON config. Relative paths are resolved against `base_dir`.
inline PipelineConfig config_from_json(const json& j, const fs::path& base_dir = {}) {
  using detail::parse_enum;
  if (!j.is_object()) throw SchemaError("config must be a JSON object");
  detail::reject_unknown(j, {"input", "output_dir", "bdl_policy", "scaling", "geo_metric", "projection",
                             "cpf", "iforest", "seed", "ch_include_outliers", "ch_features",
                             "log10_export", "column_aliases", "outputs"},
                         "");
  PipelineConfig c;
  try {
    auto resolve = [&](const fs::path& p) { return p.is_absolute() || base_dir.empty() ? p : base_dir / p; };
    if (!j.contains("input")) throw SchemaError("config is missing 'input'");
    c.input = resolve(j.at("input").get<std::string>());
    if (j.contains("output_dir")) c.output_dir = resolve(j.at("output_dir").get<std::string>());
    else c.output_dir = resolve(c.output_dir);
    if (j.contains("bdl_policy")) {
      c.bdl_policy = parse_enum<BdlPolicy>(j["bdl_policy"], "bdl_policy",
                                           {{"half_dl", BdlPolicy::half_dl}, {"reject", BdlPolicy::reject}});
    }
    if (j.contains("scaling")) {
      c.scaling = parse_enum<ScalingMethod>(j["scaling"], "scaling",
                                            {{"zscore", ScalingMethod::zscore}, {"none", ScalingMethod::none}});
    }
    if (j.contains("geo_metric")) {
      c.geo_metric = parse_enum<GeoMetric>(j["geo_metric"], "geo_metric",
                                           {{"haversine", GeoMetric::haversine},
                                            {"euclidean_itm", GeoMetric::euclidean_itm},
                                            {"euclidean_degrees", GeoMetric::euclidean_degrees}});
    }
    if (j.contains("projection")) {
      const auto& p = j["projection"];
      detail::reject_unknown(p, {"semi_major_axis", "inverse_flattening", "lat_origin", "lon_origin",
                                 "scale_factor", "false_easting", "false_northing"},
                             "projection.");
      auto& t = c.projection;
      t.semi_major_axis = p.value("semi_major_axis", t.semi_major_axis);
      t.inverse_flattening = p.value("inverse_flattening", t.inverse_flattening);
      t.lat_origin = p.value("lat_origin", t.lat_origin);
      t.lon_origin = p.value("lon_origin", t.lon_origin);
      t.scale_factor = p.value("scale_factor", t.scale_factor);
      t.false_easting = p.value("false_easting", t.false_easting);
      t.false_northing = p.value("false_northing", t.false_northing);
    }
    if (j.contains("cpf")) {
      const auto& p = j["cpf"];
      detail::reject_unknown(p, {"min_samples", "rho", "alpha", "merge_threshold",
                                 "density_ratio_threshold", "min_component_size"},
                             "cpf.");
      c.cpf.min_samples = p.value("min_samples", c.cpf.min_samples);
      c.cpf.rho = p.value("rho", c.cpf.rho);
      c.cpf.alpha = p.value("alpha", c.cpf.alpha);
      c.cpf.merge_threshold = p.value("merge_threshold", c.cpf.merge_threshold);
      c.cpf.density_ratio_threshold = p.value("density_ratio_threshold", c.cpf.density_ratio_threshold);
      if (p.contains("min_component_size") && !p["min_component_size"].is_null()) {
        c.cpf.min_component_size = p["min_component_size"].get<std::size_t>();
      }
    }
    if (j.contains("iforest")) {
      const auto& p = j["iforest"];
      detail::reject_unknown(p, {"n_trees", "subsample_size", "contamination", "features"}, "iforest.");
      c.iforest.n_trees = p.value("n_trees", c.iforest.n_trees);
      c.iforest.subsample_size = p.value("subsample_size", c.iforest.subsample_size);
      c.iforest.contamination = p.value("contamination", c.iforest.contamination);
      if (p.contains("features")) {
        c.iforest.features = parse_enum<FeatureSpace>(p["features"], "iforest.features",
                                                      {{"scaled", FeatureSpace::scaled}, {"raw", FeatureSpace::raw}});
      }
    }
    c.seed = j.value("seed", c.seed);
    c.ch_include_outliers = j.value("ch_include_outliers", c.ch_include_outliers);
    if (j.contains("ch_features")) {
      c.ch_features = parse_enum<FeatureSpace>(j["ch_features"], "ch_features",
                                               {{"scaled", FeatureSpace::scaled}, {"raw", FeatureSpace::raw}});
    }
    c.log10_export = j.value("log10_export", c.log10_export);
    if (j.contains("column_aliases")) {
      c.column_aliases = j["column_aliases"].get<ColumnAliases>();
    }
    if (j.contains("outputs")) {
      const auto& o = j["outputs"];
      detail::reject_unknown(o, {"samples", "projected", "adjacency", "labels", "refined", "summary",
                                 "plot_data", "geojson", "report"},
                             "outputs.");
      auto set = [&](const char* key, fs::path& dst) {
        if (o.contains(key)) dst = o[key].get<std::string>();
      };
      set("samples", c.outputs.samples);
      set("projected", c.outputs.projected);
      set("adjacency", c.outputs.adjacency);
      set("labels", c.outputs.labels);
      set("refined", c.outputs.refined);
      set("summary", c.outputs.summary);
      set("plot_data", c.outputs.plot_data);
      set("geojson", c.outputs.geojson);
      set("report", c.outputs.report);
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("config: ") + e.what());
  }
  return c;
}

inline PipelineConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw SchemaError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

/// Fully resolved configuration, embedded in every report.
inline ordered_json config_to_json(const PipelineConfig& c) {
  ordered_json j;
  j["input"] = c.input.string();
  j["output_dir"] = c.output_dir.string();
  j["bdl_policy"] = detail::name_of(c.bdl_policy);
  j["scaling"] = detail::name_of(c.scaling);
  j["geo_metric"] = detail::name_of(c.geo_metric);
  j["projection"] = {{"semi_major_axis", c.projection.semi_major_axis},
                     {"inverse_flattening", c.projection.inverse_flattening},
                     {"lat_origin", c.projection.lat_origin},
                     {"lon_origin", c.projection.lon_origin},
                     {"scale_factor", c.projection.scale_factor},
                     {"false_easting", c.projection.false_easting},
                     {"false_northing", c.projection.false_northing}};
  j["cpf"] = {{"min_samples", c.cpf.min_samples},
              {"rho", c.cpf.rho},
              {"alpha", c.cpf.alpha},
              {"merge_threshold", c.cpf.merge_threshold},
              {"density_ratio_threshold", c.cpf.density_ratio_threshold},
              {"min_component_size", c.cpf.component_size_gate()}};
  j["iforest"] = {{"n_trees", c.iforest.n_trees},
                  {"subsample_size", c.iforest.subsample_size},
                  {"contamination", c.iforest.contamination},
                  {"features", detail::name_of(c.iforest.features)}};
  j["seed"] = c.seed;
  j["ch_include_outliers"] = c.ch_include_outliers;
  j["ch_features"] = detail::name_of(c.ch_features);
  j["log10_export"] = c.log10_export;
  return j;
}

/// A failure inside one named stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& cause)
      : Error("stage", "[" + stage + "] " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

template <typename F>
auto run_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

// ---------------------------------------------------------------------------
// Stages. Each is a pure function of its inputs; the CLI and run_pipeline
// add file I/O around them.

inline SampleTable ingest(const PipelineConfig& c, const fs::path& input) {
  return parse_g5_csv(input, IngestOptions{c.bdl_policy, c.column_aliases});
}

inline std::vector<geodesy::GeoCoord> project(const SampleTable& t, const geodesy::TmProjection& p) {
  std::vector<geodesy::GeoCoord> out;
  out.reserve(t.size());
  for (const auto& r : t.records) {
    try {
      out.push_back(geodesy::itm_to_wgs84({r.easting, r.northing}, p));
    } catch (const DomainError& e) {
      throw DomainError("site '" + r.site_id + "': " + e.what());
    }
  }
  return out;
}

inline SparseAdjacency geo_graph(const io::ProjectedTable& pt, const PipelineConfig& c) {
  const std::size_t n = pt.table.size();
  Matrix pts(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    if (c.geo_metric == GeoMetric::euclidean_itm) {
      pts(i, 0) = pt.table.records[i].easting;
      pts(i, 1) = pt.table.records[i].northing;
    } else {
      pts(i, 0) = pt.coords[i].latitude;
      pts(i, 1) = pt.coords[i].longitude;
    }
  }
  if (n <= c.cpf.min_samples) {
    throw ParameterError("min_samples (" + std::to_string(c.cpf.min_samples) +
                         ") must be smaller than the number of samples (" + std::to_string(n) + ")");
  }
  return mutual_knn_graph(pts, c.cpf.min_samples,
                          c.geo_metric == GeoMetric::haversine ? Metric::haversine : Metric::euclidean);
}

/// Clustering features and the raw ones, per the configured scaling.
struct Features {
  FeatureMatrix raw;
  FeatureMatrix scaled;
  ScalingParams scaling;
};

inline Features features(const SampleTable& t, ScalingMethod m) {
  Features f;
  f.raw = select_features(t);
  auto [scaled, params] = standardize(f.raw, m);
  f.scaled = std::move(scaled);
  f.scaling = std::move(params);
  return f;
}

struct ClusterStage {
  std::vector<io::LabelRow> rows;
  cpf::FitResult fit;
};

inline ClusterStage cluster(const io::ProjectedTable& pt, const SparseAdjacency& geo,
                            const PipelineConfig& c) {
  const auto f = features(pt.table, c.scaling);
  ClusterStage out{{}, cpf::fit(f.scaled.values, geo, c.cpf)};
  out.rows.reserve(pt.table.size());
  for (std::size_t i = 0; i < pt.table.size(); ++i) {
    out.rows.push_back({pt.table.records[i].site_id, out.fit.labeling.labels[i],
                        out.fit.density.log_density[i], out.fit.big_brother.omega[i],
                        out.fit.components.labels[i], std::nullopt, false});
  }
  return out;
}

inline void check_aligned(const io::ProjectedTable& pt, const std::vector<io::LabelRow>& rows) {
  if (rows.size() != pt.table.size()) {
    throw DataError("labelling has " + std::to_string(rows.size()) + " rows but the sample table has " +
                    std::to_string(pt.table.size()));
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].site_id != pt.table.records[i].site_id) {
      throw DataError("labelling row " + std::to_string(i) + " is site '" + rows[i].site_id +
                      "' but the sample table has '" + pt.table.records[i].site_id + "'");
    }
  }
}

struct RefineStage {
  std::vector<io::LabelRow> rows;
  std::size_t scored = 0;
  std::size_t flagged = 0;
  std::vector<std::string> warnings;
};

/// Isolation Forest over the outlier set (cluster -1) only.
inline RefineStage refine(const io::ProjectedTable& pt, std::vector<io::LabelRow> rows,
                          const PipelineConfig& c) {
  check_aligned(pt, rows);
  RefineStage out;
  std::vector<std::size_t> subset;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].anomaly_score.reset();
    rows[i].iforest_flag = false;
    if (rows[i].cluster_label < 0) subset.push_back(i);
  }
  if (subset.size() < 2) {
    out.warnings.push_back("outlier set has fewer than 2 samples; isolation forest skipped");
    out.rows = std::move(rows);
    return out;
  }
  const auto f = features(pt.table, c.scaling);
  const auto& space = c.iforest.features == FeatureSpace::scaled ? f.scaled.values : f.raw.values;
  const Matrix x = space.select_rows(subset);
  const auto model = iforest::fit_iforest(x, c.iforest.n_trees, c.iforest.subsample_size, c.seed);
  const auto scores = iforest::anomaly_scores(model, x);
  const auto flags = iforest::flag_outliers(scores, c.iforest.contamination);
  for (std::size_t s = 0; s < subset.size(); ++s) {
    rows[subset[s]].anomaly_score = scores[s];
    rows[subset[s]].iforest_flag = flags[s];
    out.flagged += flags[s] ? 1 : 0;
  }
  out.scored = subset.size();
  out.rows = std::move(rows);
  return out;
}

struct SummaryStage {
  metrics::ClusterSummary summary;
  std::optional<double> ch;  // unset when fewer than 2 clusters
  std::string ch_note;
};

inline SummaryStage summarize(const io::ProjectedTable& pt, const std::vector<io::LabelRow>& rows,
                              const PipelineConfig& c) {
  check_aligned(pt, rows);
  std::vector<int> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = rows[i].cluster_label;
  SummaryStage out;
  out.summary = metrics::cluster_summary(pt.table, labels, c.log10_export);
  const auto f = features(pt.table, c.scaling);
  const auto& space = c.ch_features == FeatureSpace::scaled ? f.scaled.values : f.raw.values;
  try {
    out.ch = metrics::calinski_harabasz(space, labels, c.ch_include_outliers);
  } catch (const ParameterError& e) {
    out.ch_note = e.what();
  }
  return out;
}

// ---------------------------------------------------------------------------

struct RunReport {
  std::size_t n_samples = 0;
  std::size_t bdl_substitutions = 0;
  std::vector<std::size_t> cluster_sizes;
  std::size_t outliers = 0;
  std::optional<std::size_t> components;
  std::optional<std::size_t> centers_before_merge;
  std::optional<double> calinski_harabasz;
  std::size_t iforest_scored = 0;
  std::size_t iforest_flagged = 0;
  std::vector<std::string> warnings;
  std::vector<std::pair<std::string, double>> timings;  // seconds per stage

  std::size_t clusters() const noexcept { return cluster_sizes.size(); }
};

inline ordered_json report_to_json(const RunReport& r, const PipelineConfig& c) {
  ordered_json j;
  j["n_samples"] = r.n_samples;
  j["bdl_substitutions"] = r.bdl_substitutions;
  j["clusters"] = r.clusters();
  j["cluster_sizes"] = r.cluster_sizes;
  j["outliers"] = r.outliers;
  if (r.components) j["components"] = *r.components;
  if (r.centers_before_merge) j["centers_before_merge"] = *r.centers_before_merge;
  if (!r.calinski_harabasz) {
    j["calinski_harabasz"] = nullptr;
  } else if (std::isinf(*r.calinski_harabasz)) {
    j["calinski_harabasz"] = "inf";
  } else {
    j["calinski_harabasz"] = *r.calinski_harabasz;
  }
  j["iforest"] = {{"scored", r.iforest_scored}, {"flagged", r.iforest_flagged}};
  j["warnings"] = r.warnings;
  ordered_json t = ordered_json::object();
  for (const auto& [stage, secs] : r.timings) t[stage] = secs;
  j["timings_seconds"] = t;
  j["config"] = config_to_json(c);
  return j;
}

inline RunReport summary_report(const io::ProjectedTable& pt, const RefineStage& refined,
                                const SummaryStage& summary) {
  RunReport r;
  r.n_samples = pt.table.size();
  r.bdl_substitutions = pt.table.bdl_substitutions;
  for (const auto& [label, size] : summary.summary.sizes) {
    if (label < 0) r.outliers = size;
  }
  for (const auto& [label, size] : summary.summary.sizes) {
    if (label >= 0) r.cluster_sizes.push_back(size);
  }
  std::stable_sort(r.cluster_sizes.begin(), r.cluster_sizes.end(), std::greater<>());
  r.calinski_harabasz = summary.ch;
  if (!summary.ch) r.warnings.push_back("Calinski-Harabasz not computed: " + summary.ch_note);
  r.iforest_scored = refined.scored;
  r.iforest_flagged = refined.flagged;
  r.warnings.insert(r.warnings.end(), refined.warnings.begin(), refined.warnings.end());
  r.warnings.insert(r.warnings.end(), summary.summary.warnings.begin(), summary.summary.warnings.end());
  return r;
}

/// Runs every stage in order and writes all outputs. On failure, files
/// written during this run are removed and a StageError is thrown.
inline RunReport run_pipeline(const PipelineConfig& c) {
  std::vector<fs::path> written;
  auto emit = [&](const fs::path& name, const std::string& content) {
    const auto p = c.out(name);
    written.push_back(p);
    io::write_file(p, content);
  };
  using clock = std::chrono::steady_clock;
  std::vector<std::pair<std::string, double>> timings;
  auto timed = [&](const std::string& stage, auto&& f) {
    const auto t0 = clock::now();
    auto result = run_stage(stage, f);
    timings.emplace_back(stage, std::chrono::duration<double>(clock::now() - t0).count());
    return result;
  };

  try {
    run_stage("config", [&] { c.validate(); return 0; });
    io::ProjectedTable pt;
    pt.table = timed("ingest", [&] {
      auto t = ingest(c, c.input);
      emit(c.outputs.samples, io::samples_csv(t));
      return t;
    });
    pt.coords = timed("project", [&] {
      auto coords = project(pt.table, c.projection);
      emit(c.outputs.projected, io::samples_csv(pt.table, coords));
      return coords;
    });
    const auto geo = timed("graph", [&] {
      auto g = geo_graph(pt, c);
      std::ostringstream bin;
      write_adjacency(bin, g);
      emit(c.outputs.adjacency, bin.str());
      return g;
    });
    auto clustered = timed("cluster", [&] {
      auto r = cluster(pt, geo, c);
      emit(c.outputs.labels, io::labels_csv(r.rows, false));
      return r;
    });
    const auto refined = timed("refine", [&] {
      auto r = refine(pt, clustered.rows, c);
      emit(c.outputs.refined, io::labels_csv(r.rows, true));
      return r;
    });
    const auto summary = timed("summarize", [&] {
      auto s = summarize(pt, refined.rows, c);
      emit(c.outputs.summary, io::summary_csv(s.summary));
      emit(c.outputs.plot_data, io::plot_data_csv(s.summary));
      return s;
    });
    timed("export", [&] {
      emit(c.outputs.geojson, io::geojson(refined.rows, pt.coords));
      return 0;
    });

    auto report = summary_report(pt, refined, summary);
    report.components = clustered.fit.components.count();
    report.centers_before_merge = clustered.fit.centers.size();
    report.warnings.insert(report.warnings.begin(), clustered.fit.density.warnings.begin(),
                           clustered.fit.density.warnings.end());
    report.timings = timings;
    emit(c.outputs.report, report_to_json(report, c).dump(2) + "\n");
    return report;
  } catch (...) {
    std::error_code ec;
    for (const auto& p : written) fs::remove(p, ec);
    throw;
  }
}

}  // namespace spatial_cpf::pipeline
