#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spatial_cpf/error.hpp"
#include "spatial_cpf/graph.hpp"
#include "spatial_cpf/knn.hpp"
#include "spatial_cpf/matrix.hpp"
#include "spatial_cpf/stats.hpp"

// Component-wise peak finding: density peaks searched independently inside
// each connected component of the (geographic AND geochemical) neighbour graph.
namespace spatial_cpf::cpf {

struct CpfParams {
  std::size_t min_samples = 75;
  double rho = 0.01;
  double alpha = 0.015;
  double merge_threshold = 7.5;
  double density_ratio_threshold = 0.7;
  std::optional<std::size_t> min_component_size;  // unset: min_samples

  std::size_t component_size_gate() const noexcept {
    return min_component_size.value_or(min_samples);
  }

  void validate() const {
    if (min_samples < 1) throw ParameterError("min_samples must be at least 1");
    if (!(rho >= 0.0 && rho < 1.0)) throw ParameterError("rho must lie in [0, 1)");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1)");
    if (!(merge_threshold >= 0.0)) throw ParameterError("merge_threshold must be >= 0");
    if (!(density_ratio_threshold > 0.0 && density_ratio_threshold <= 1.0)) {
      throw ParameterError("density_ratio_threshold must lie in (0, 1]");
    }
    if (min_component_size && *min_component_size < 1) {
      throw ParameterError("min_component_size must be at least 1");
    }
  }
};

inline constexpr std::size_t kNoParent = std::numeric_limits<std::size_t>::max();
inline constexpr int kOutlier = -1;

struct DensityEstimate {
  std::vector<double> r_k;          // distance to the k-th nearest neighbour
  std::vector<double> log_density;  // log(k / (n V_d r_k^d))
  std::vector<std::string> warnings;
};

struct BigBrother {
  std::vector<std::size_t> parent;  // kNoParent at each component's density maximum
  std::vector<double> omega;        // distance to parent, +inf without one
};

struct ClusterLabeling {
  std::vector<int> labels;          // kOutlier or 0..cluster_count-1
  std::vector<std::size_t> sizes;   // by label; descending

  std::size_t cluster_count() const noexcept { return sizes.size(); }
  std::size_t outlier_count() const noexcept {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kOutlier));
  }
};

/// Natural log of the volume of the unit ball in d dimensions.
inline double log_unit_ball_volume(std::size_t d) {
  const double h = static_cast<double>(d) / 2.0;
  return h * std::log(std::numbers::pi) - std::lgamma(h + 1.0);
}

/// kNN density from precomputed neighbour lists over the full feature set.
inline DensityEstimate knn_density(const NeighborLists& knn, std::size_t dims) {
  const std::size_t n = knn.n;
  const std::size_t k = knn.k;
  DensityEstimate out{std::vector<double>(n), std::vector<double>(n), {}};

  double min_positive = std::numeric_limits<double>::infinity();
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out.r_k[i] = knn.kth_distance(i);
    if (out.r_k[i] > 0.0) {
      min_positive = std::min(min_positive, out.r_k[i]);
    } else {
      ++zeros;
    }
  }
  if (zeros > 0) {
    const double substitute = std::isfinite(min_positive) ? min_positive * 1e-3 : 1.0;
    for (auto& r : out.r_k) {
      if (r <= 0.0) r = substitute;
    }
    out.warnings.push_back(std::to_string(zeros) +
                           " sample(s) have a zero k-NN radius (duplicate points); radius set to " +
                           std::to_string(substitute));
  }

  const double base = std::log(static_cast<double>(k)) - std::log(static_cast<double>(n)) -
                      log_unit_ball_volume(dims);
  for (std::size_t i = 0; i < n; ++i) {
    out.log_density[i] = base - static_cast<double>(dims) * std::log(out.r_k[i]);
  }
  return out;
}

inline DensityEstimate knn_density(const Matrix& features, const CpfParams& params) {
  if (features.rows() <= params.min_samples) {
    throw ParameterError("min_samples (" + std::to_string(params.min_samples) +
                         ") must be smaller than the number of samples (" +
                         std::to_string(features.rows()) + ")");
  }
  return knn_density(knn_search(features, params.min_samples, Metric::euclidean), features.cols());
}

namespace detail {

// True when j outranks i: strictly denser, or equally dense with a lower index.
inline bool outranks(const std::vector<double>& ld, std::size_t j, std::size_t i) noexcept {
  return ld[j] > ld[i] || (ld[j] == ld[i] && j < i);
}

inline std::vector<std::vector<std::size_t>> members_by_component(const ComponentLabels& comps) {
  std::vector<std::vector<std::size_t>> members(comps.count());
  for (std::size_t c = 0; c < comps.count(); ++c) members[c].reserve(comps.sizes[c]);
  for (std::size_t i = 0; i < comps.n(); ++i) members[comps.labels[i]].push_back(i);
  return members;
}

// Size-descending labels; equal sizes ordered by smallest member index.
inline ClusterLabeling canonical_relabel(const std::vector<std::size_t>& group_of,
                                         std::size_t group_count) {
  constexpr auto kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> size(group_count, 0), first(group_count, kNone);
  for (std::size_t i = 0; i < group_of.size(); ++i) {
    const auto g = group_of[i];
    if (g == kNone) continue;
    ++size[g];
    first[g] = std::min(first[g], i);
  }
  std::vector<std::size_t> groups;
  for (std::size_t g = 0; g < group_count; ++g) {
    if (size[g] > 0) groups.push_back(g);
  }
  std::sort(groups.begin(), groups.end(), [&](std::size_t a, std::size_t b) {
    return size[a] != size[b] ? size[a] > size[b] : first[a] < first[b];
  });
  std::vector<int> new_label(group_count, kOutlier);
  ClusterLabeling out{std::vector<int>(group_of.size(), kOutlier), {}};
  for (std::size_t r = 0; r < groups.size(); ++r) {
    new_label[groups[r]] = static_cast<int>(r);
    out.sizes.push_back(size[groups[r]]);
  }
  for (std::size_t i = 0; i < group_of.size(); ++i) {
    if (group_of[i] != kNone) out.labels[i] = new_label[group_of[i]];
  }
  return out;
}

}  // namespace detail

/// Nearest outranking sample in the same component. When `knn` is given, its
/// lists are scanned first; the first qualifying entry is already the global
/// (distance, index) minimum, so the full component scan runs only for local
/// density peaks.
inline BigBrother big_brother(const Matrix& features, const DensityEstimate& density,
                              const ComponentLabels& components,
                              const NeighborLists* knn = nullptr) {
  const std::size_t n = features.rows();
  if (components.n() != n || density.log_density.size() != n) {
    throw ParameterError("big_brother: inputs disagree on the number of samples");
  }
  const auto& ld = density.log_density;
  const auto members = detail::members_by_component(components);
  BigBrother bb{std::vector<std::size_t>(n, kNoParent),
                std::vector<double>(n, std::numeric_limits<double>::infinity())};

  for (std::size_t i = 0; i < n; ++i) {
    const auto comp = components.labels[i];
    if (knn != nullptr && knn->n == n) {
      const auto nb = knn->neighbors(i);
      const auto nd = knn->distances(i);
      bool found = false;
      for (std::size_t r = 0; r < nb.size(); ++r) {
        const std::size_t j = nb[r];
        if (components.labels[j] == comp && detail::outranks(ld, j, i)) {
          bb.parent[i] = j;
          bb.omega[i] = nd[r];
          found = true;
          break;
        }
      }
      if (found) continue;
    }
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = kNoParent;
    const auto row_i = features.row(i);
    for (const auto j : members[comp]) {
      if (!detail::outranks(ld, j, i)) continue;
      const double d2 = squared_distance(row_i, features.row(j));
      if (d2 < best || (d2 == best && j < best_j)) {
        best = d2;
        best_j = j;
      }
    }
    if (best_j != kNoParent) {
      bb.parent[i] = best_j;
      bb.omega[i] = std::sqrt(best);
    }
  }
  return bb;
}

/// Per qualifying component: a sample is a centre when its omega is infinite
/// or above the (1 - alpha) quantile of the component's finite omegas, and its
/// log density is at least the component's rho quantile.
inline std::vector<std::size_t> select_centers(const DensityEstimate& density, const BigBrother& bb,
                                               const ComponentLabels& components,
                                               const CpfParams& params) {
  const auto members = detail::members_by_component(components);
  const std::size_t gate = params.component_size_gate();
  std::vector<std::size_t> centers;
  std::vector<double> omegas, dens;
  for (const auto& comp : members) {
    if (comp.size() < gate) continue;
    omegas.clear();
    dens.clear();
    for (const auto i : comp) {
      if (std::isfinite(bb.omega[i])) omegas.push_back(bb.omega[i]);
      dens.push_back(density.log_density[i]);
    }
    const double omega_cut = omegas.empty() ? std::numeric_limits<double>::infinity()
                                            : stats::quantile(omegas, 1.0 - params.alpha);
    const double density_cut = stats::quantile(dens, params.rho);
    for (const auto i : comp) {
      const bool far = std::isinf(bb.omega[i]) || bb.omega[i] > omega_cut;
      if (far && density.log_density[i] >= density_cut) centers.push_back(i);
    }
  }
  std::sort(centers.begin(), centers.end());
  return centers;
}

/// Each centre seeds a cluster; other samples inherit their parent's cluster.
/// Samples in components below the size gate become outliers.
inline ClusterLabeling assign_clusters(const BigBrother& bb, std::span<const std::size_t> centers,
                                       const ComponentLabels& components,
                                       std::size_t min_component_size) {
  constexpr auto kNone = std::numeric_limits<std::size_t>::max();
  const std::size_t n = components.n();
  if (bb.parent.size() != n) throw ParameterError("assign_clusters: size mismatch");
  auto gated = [&](std::size_t i) {
    return components.sizes[components.labels[i]] < min_component_size;
  };
  std::vector<std::size_t> group(n, kNone);
  for (std::size_t c = 0; c < centers.size(); ++c) {
    if (!gated(centers[c])) group[centers[c]] = c;
  }

  std::vector<std::size_t> path;
  for (std::size_t i = 0; i < n; ++i) {
    if (gated(i) || group[i] != kNone) continue;
    path.clear();
    std::size_t cur = i;
    while (group[cur] == kNone) {
      const auto p = bb.parent[cur];
      if (p == kNoParent || p >= n || components.labels[p] != components.labels[cur] ||
          path.size() > n) {
        throw ConsistencyError("broken parent chain at sample " + std::to_string(cur));
      }
      path.push_back(cur);
      cur = p;
    }
    for (const auto v : path) group[v] = group[cur];
  }
  return detail::canonical_relabel(group, centers.size());
}

/// Joins clusters whose centres are within merge_threshold of each other and
/// whose centre densities have ratio >= density_ratio_threshold; closed
/// transitively.
inline ClusterLabeling merge_clusters(const ClusterLabeling& labeling,
                                      std::span<const std::size_t> centers,
                                      const DensityEstimate& density, const Matrix& features,
                                      const CpfParams& params) {
  const std::size_t k = labeling.cluster_count();
  UnionFind uf(k);
  const double log_ratio_cut = std::log(params.density_ratio_threshold);
  const double dist2_cut = params.merge_threshold * params.merge_threshold;
  for (std::size_t a = 0; a < centers.size(); ++a) {
    for (std::size_t b = a + 1; b < centers.size(); ++b) {
      const auto ca = centers[a], cb = centers[b];
      const int la = labeling.labels[ca], lb = labeling.labels[cb];
      if (la < 0 || lb < 0 || la == lb) continue;
      if (squared_distance(features.row(ca), features.row(cb)) > dist2_cut) continue;
      const double gap = std::abs(density.log_density[ca] - density.log_density[cb]);
      if (-gap < log_ratio_cut) continue;
      uf.unite(static_cast<std::size_t>(la), static_cast<std::size_t>(lb));
    }
  }
  constexpr auto kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> group(labeling.labels.size(), kNone);
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (labeling.labels[i] >= 0) group[i] = uf.find(static_cast<std::size_t>(labeling.labels[i]));
  }
  return detail::canonical_relabel(group, k);
}

/// Everything fit() computes, for diagnostics and export.
struct FitResult {
  ClusterLabeling labeling;
  ClusterLabeling unmerged;
  DensityEstimate density;
  BigBrother big_brother;
  ComponentLabels components;
  SparseAdjacency graph;  // geographic AND feature mutual kNN graph
  std::vector<std::size_t> centers;
  std::size_t feature_graph_edges = 0;
};

/// Full pipeline over standardized features and a precomputed geographic
/// mutual kNN graph.
inline FitResult fit(const Matrix& features, const SparseAdjacency& geo_adj,
                     const CpfParams& params) {
  params.validate();
  const std::size_t n = features.rows();
  if (geo_adj.n() != n) {
    throw ParameterError("geographic adjacency has " + std::to_string(geo_adj.n()) +
                         " vertices but there are " + std::to_string(n) + " samples");
  }
  if (n <= params.min_samples) {
    throw ParameterError("min_samples (" + std::to_string(params.min_samples) +
                         ") must be smaller than the number of samples (" + std::to_string(n) + ")");
  }
  const auto knn = knn_search(features, params.min_samples, Metric::euclidean);
  const auto feature_graph = mutual_knn_graph(knn);

  FitResult r;
  r.feature_graph_edges = feature_graph.edge_count();
  r.graph = hadamard_intersect(geo_adj, feature_graph);
  r.components = connected_components(r.graph);
  r.density = knn_density(knn, features.cols());
  r.big_brother = big_brother(features, r.density, r.components, &knn);
  r.centers = select_centers(r.density, r.big_brother, r.components, params);
  r.unmerged =
      assign_clusters(r.big_brother, r.centers, r.components, params.component_size_gate());
  r.labeling = merge_clusters(r.unmerged, r.centers, r.density, features, params);
  return r;
}

}  // namespace spatial_cpf::cpf
