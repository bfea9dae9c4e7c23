// Command-line driver: `spatial-cpf run --config cfg.json` runs every stage;
// each stage is also available on its own and reads/writes the intermediate
// files named in the config's output directory.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spatial_cpf/spatial_cpf.hpp"

namespace fs = std::filesystem;
using namespace spatial_cpf;
using pipeline::PipelineConfig;

namespace {

struct StageArgs {
  std::string config;
  std::string in;
  std::string out;
  std::optional<std::uint64_t> seed;
};

PipelineConfig load(const StageArgs& a) {
  auto c = pipeline::run_stage("config", [&] {
    auto cfg = pipeline::load_config(a.config);
    if (a.seed) cfg.seed = *a.seed;
    cfg.validate();
    return cfg;
  });
  return c;
}

fs::path pick(const std::string& override_path, const fs::path& fallback) {
  return override_path.empty() ? fallback : fs::path(override_path);
}

void print_report(const pipeline::RunReport& r) {
  std::cout << "samples:   " << r.n_samples << "\n"
            << "clusters:  " << r.clusters() << " (sizes";
  for (const auto s : r.cluster_sizes) std::cout << " " << s;
  std::cout << ")\n"
            << "outliers:  " << r.outliers << "\n"
            << "CH score:  "
            << (r.calinski_harabasz ? text::format_double(*r.calinski_harabasz) : std::string("n/a"))
            << "\n"
            << "iforest:   " << r.iforest_flagged << " flagged of " << r.iforest_scored << " scored\n";
  for (const auto& [stage, secs] : r.timings) {
    std::cout << "  " << stage << ": " << secs << " s\n";
  }
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
}

CLI::App* add_stage(CLI::App& app, const std::string& name, const std::string& help, StageArgs& a) {
  auto* sub = app.add_subcommand(name, help);
  sub->add_option("--config", a.config, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  sub->add_option("--seed", a.seed, "Override the top-level seed");
  return sub;
}

void add_io(CLI::App* sub, StageArgs& a, const std::string& in_help, const std::string& out_help) {
  sub->add_option("--in", a.in, in_help);
  sub->add_option("--out", a.out, out_help);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatially constrained CPF clustering of geochemical soil samples"};
  app.require_subcommand(1);

  StageArgs run_a, ingest_a, project_a, graph_a, cluster_a, refine_a, summarize_a, export_a, grid_a;
  auto* run = add_stage(app, "run", "Run the full pipeline", run_a);
  auto* ingest = add_stage(app, "ingest", "Parse the input CSV into the canonical samples file", ingest_a);
  add_io(ingest, ingest_a, "Raw G5 CSV (default: config input)", "Samples CSV");
  auto* project = add_stage(app, "project", "Add WGS84 latitude/longitude to the samples", project_a);
  add_io(project, project_a, "Samples CSV", "Projected samples CSV");
  auto* graph = add_stage(app, "graph", "Build the geographic mutual kNN graph", graph_a);
  add_io(graph, graph_a, "Projected samples CSV", "Adjacency binary");
  auto* cluster = add_stage(app, "cluster", "Run spatial CPF clustering", cluster_a);
  add_io(cluster, cluster_a, "Projected samples CSV", "Labelling CSV");
  auto* refine = add_stage(app, "refine", "Isolation Forest over the outlier set", refine_a);
  add_io(refine, refine_a, "Labelling CSV", "Refined labelling CSV");
  auto* summarize = add_stage(app, "summarize", "Cluster statistics, plot data and CH score", summarize_a);
  add_io(summarize, summarize_a, "Refined labelling CSV", "Summary CSV");
  auto* exp = add_stage(app, "export", "Write the GeoJSON map layer", export_a);
  add_io(exp, export_a, "Refined labelling CSV", "GeoJSON file");

  auto* grid = add_stage(app, "grid", "Cluster over a grid of hyperparameters", grid_a);
  std::vector<std::size_t> grid_min_samples;
  std::vector<double> grid_rho, grid_alpha, grid_merge, grid_ratio;
  grid->add_option("--min-samples", grid_min_samples, "min_samples values");
  grid->add_option("--rho", grid_rho, "rho values");
  grid->add_option("--alpha", grid_alpha, "alpha values");
  grid->add_option("--merge-threshold", grid_merge, "merge_threshold values");
  grid->add_option("--density-ratio-threshold", grid_ratio, "density_ratio_threshold values");
  grid->add_option("--out", grid_a.out, "Results CSV (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto c = load(run_a);
      print_report(pipeline::run_pipeline(c));
    } else if (*ingest) {
      const auto c = load(ingest_a);
      const auto t = pipeline::run_stage("ingest", [&] { return pipeline::ingest(c, pick(ingest_a.in, c.input)); });
      pipeline::run_stage("ingest", [&] {
        io::write_file(pick(ingest_a.out, c.out(c.outputs.samples)), io::samples_csv(t));
        return 0;
      });
      std::cout << t.size() << " samples (" << t.bdl_substitutions << " below-detection-limit values substituted)\n";
    } else if (*project) {
      const auto c = load(project_a);
      pipeline::run_stage("project", [&] {
        const auto t = parse_g5_csv(pick(project_a.in, c.out(c.outputs.samples)));
        const auto coords = pipeline::project(t, c.projection);
        io::write_file(pick(project_a.out, c.out(c.outputs.projected)), io::samples_csv(t, coords));
        return 0;
      });
    } else if (*graph) {
      const auto c = load(graph_a);
      pipeline::run_stage("graph", [&] {
        const auto pt = io::read_projected_csv(pick(graph_a.in, c.out(c.outputs.projected)));
        const auto g = pipeline::geo_graph(pt, c);
        const auto out = pick(graph_a.out, c.out(c.outputs.adjacency));
        std::ostringstream bin;
        write_adjacency(bin, g);
        io::write_file(out, bin.str());
        std::cout << g.n() << " vertices, " << g.edge_count() << " edges\n";
        return 0;
      });
    } else if (*cluster) {
      const auto c = load(cluster_a);
      pipeline::run_stage("cluster", [&] {
        const auto pt = io::read_projected_csv(pick(cluster_a.in, c.out(c.outputs.projected)));
        const auto geo = read_adjacency(c.out(c.outputs.adjacency));
        const auto r = pipeline::cluster(pt, geo, c);
        io::write_file(pick(cluster_a.out, c.out(c.outputs.labels)), io::labels_csv(r.rows, false));
        std::cout << r.fit.labeling.cluster_count() << " clusters, " << r.fit.labeling.outlier_count()
                  << " outliers\n";
        return 0;
      });
    } else if (*refine) {
      const auto c = load(refine_a);
      pipeline::run_stage("refine", [&] {
        const auto pt = io::read_projected_csv(c.out(c.outputs.projected));
        const auto rows = io::read_labels_csv(pick(refine_a.in, c.out(c.outputs.labels)));
        const auto r = pipeline::refine(pt, rows, c);
        io::write_file(pick(refine_a.out, c.out(c.outputs.refined)), io::labels_csv(r.rows, true));
        std::cout << r.flagged << " flagged of " << r.scored << " scored\n";
        return 0;
      });
    } else if (*summarize) {
      const auto c = load(summarize_a);
      pipeline::run_stage("summarize", [&] {
        const auto pt = io::read_projected_csv(c.out(c.outputs.projected));
        const auto rows = io::read_labels_csv(pick(summarize_a.in, c.out(c.outputs.refined)));
        const auto s = pipeline::summarize(pt, rows, c);
        io::write_file(pick(summarize_a.out, c.out(c.outputs.summary)), io::summary_csv(s.summary));
        io::write_file(c.out(c.outputs.plot_data), io::plot_data_csv(s.summary));
        pipeline::RefineStage refined;
        refined.rows = rows;
        for (const auto& r : rows) {
          refined.scored += r.anomaly_score ? 1 : 0;
          refined.flagged += r.iforest_flag ? 1 : 0;
        }
        const auto report = pipeline::summary_report(pt, refined, s);
        io::write_file(c.out(c.outputs.report), pipeline::report_to_json(report, c).dump(2) + "\n");
        print_report(report);
        return 0;
      });
    } else if (*exp) {
      const auto c = load(export_a);
      pipeline::run_stage("export", [&] {
        const auto pt = io::read_projected_csv(c.out(c.outputs.projected));
        const auto rows = io::read_labels_csv(pick(export_a.in, c.out(c.outputs.refined)));
        pipeline::check_aligned(pt, rows);
        io::write_file(pick(export_a.out, c.out(c.outputs.geojson)), io::geojson(rows, pt.coords));
        return 0;
      });
    } else if (*grid) {
      const auto c = load(grid_a);
      pipeline::run_stage("grid", [&] {
        auto or_default = []<typename T>(std::vector<T> v, T d) {
          if (v.empty()) v.push_back(d);
          return v;
        };
        const auto ms = or_default(grid_min_samples, c.cpf.min_samples);
        const auto rhos = or_default(grid_rho, c.cpf.rho);
        const auto alphas = or_default(grid_alpha, c.cpf.alpha);
        const auto merges = or_default(grid_merge, c.cpf.merge_threshold);
        const auto ratios = or_default(grid_ratio, c.cpf.density_ratio_threshold);

        io::ProjectedTable pt;
        pt.table = pipeline::ingest(c, c.input);
        pt.coords = pipeline::project(pt.table, c.projection);
        const auto f = pipeline::features(pt.table, c.scaling);
        const auto& ch_space =
            c.ch_features == pipeline::FeatureSpace::scaled ? f.scaled.values : f.raw.values;

        std::string csv =
            "min_samples,rho,alpha,merge_threshold,density_ratio_threshold,clusters,outliers,calinski_harabasz\n";
        for (const auto m : ms) {
          auto cm = c;
          cm.cpf.min_samples = m;
          const auto geo = pipeline::geo_graph(pt, cm);
          for (const auto rho : rhos)
            for (const auto alpha : alphas)
              for (const auto merge : merges)
                for (const auto ratio : ratios) {
                  auto p = cm.cpf;
                  p.rho = rho;
                  p.alpha = alpha;
                  p.merge_threshold = merge;
                  p.density_ratio_threshold = ratio;
                  const auto r = cpf::fit(f.scaled.values, geo, p);
                  std::string ch = "";
                  try {
                    ch = text::format_double(
                        metrics::calinski_harabasz(ch_space, r.labeling.labels, c.ch_include_outliers));
                  } catch (const ParameterError&) {
                  }
                  csv += std::to_string(m) + "," + text::format_double(rho) + "," +
                         text::format_double(alpha) + "," + text::format_double(merge) + "," +
                         text::format_double(ratio) + "," + std::to_string(r.labeling.cluster_count()) +
                         "," + std::to_string(r.labeling.outlier_count()) + "," + ch + "\n";
                }
        }
        if (grid_a.out.empty()) {
          std::cout << csv;
        } else {
          io::write_file(grid_a.out, csv);
        }
        return 0;
      });
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
