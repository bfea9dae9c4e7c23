#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spatial_cpf/error.hpp"
#include "spatial_cpf/ingest.hpp"
#include "spatial_cpf/matrix.hpp"
#include "spatial_cpf/stats.hpp"

namespace spatial_cpf::metrics {

/// Calinski-Harabasz index [B / (K - 1)] / [W / (n - K)]. Samples labelled -1
/// are dropped unless include_outliers is set, in which case they form one
/// extra group. Zero within-cluster dispersion yields +inf.
inline double calinski_harabasz(const Matrix& x, std::span<const int> labels,
                                bool include_outliers = false) {
  if (labels.size() != x.rows()) throw ParameterError("labels and features differ in length");
  const std::size_t d = x.cols();

  std::map<int, std::size_t> slot;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 && !include_outliers) continue;
    slot.try_emplace(labels[i], slot.size());
  }
  const std::size_t k = slot.size();
  if (k < 2) throw ParameterError("Calinski-Harabasz needs at least 2 clusters, got " + std::to_string(k));

  std::vector<double> centroid(k * d, 0.0), overall(d, 0.0);
  std::vector<std::size_t> count(k, 0);
  std::size_t n_eff = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto it = slot.find(labels[i]);
    if (it == slot.end()) continue;
    const auto c = it->second;
    ++count[c];
    ++n_eff;
    for (std::size_t j = 0; j < d; ++j) {
      centroid[c * d + j] += x(i, j);
      overall[j] += x(i, j);
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) centroid[c * d + j] /= static_cast<double>(count[c]);
  }
  for (auto& v : overall) v /= static_cast<double>(n_eff);

  double between = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = centroid[c * d + j] - overall[j];
      between += static_cast<double>(count[c]) * diff * diff;
    }
  }
  double within = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto it = slot.find(labels[i]);
    if (it == slot.end()) continue;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = x(i, j) - centroid[it->second * d + j];
      within += diff * diff;
    }
  }
  if (within == 0.0) return std::numeric_limits<double>::infinity();
  // n_eff == k forces within == 0, so this only guards malformed input.
  if (n_eff <= k) throw ParameterError("Calinski-Harabasz needs more samples than clusters");
  return (between / static_cast<double>(k - 1)) /
         (within / static_cast<double>(n_eff - k));
}

struct ElementSummary {
  int cluster = 0;
  std::string element;
  stats::BoxStats raw;                   // mg/kg
  std::optional<stats::BoxStats> log10;  // log10(mg/kg), when requested
};

/// Box-plot statistics per (cluster, element). Cluster -1 is the outlier set.
struct ClusterSummary {
  std::vector<int> clusters;                 // ascending, only non-empty ids
  std::map<int, std::size_t> sizes;
  std::vector<ElementSummary> entries;       // cluster-major, element order of the table
  std::vector<std::string> warnings;

  const ElementSummary* find(int cluster, std::string_view element) const {
    for (const auto& e : entries) {
      if (e.cluster == cluster && e.element == element) return &e;
    }
    return nullptr;
  }
};

inline ClusterSummary cluster_summary(const SampleTable& table, std::span<const int> labels,
                                      bool log10_export = false) {
  if (labels.size() != table.size()) throw ParameterError("labels and table differ in length");
  ClusterSummary out;
  int max_label = -1;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++out.sizes[labels[i]];
    max_label = std::max(max_label, labels[i]);
  }
  for (int c = 0; c <= max_label; ++c) {
    if (!out.sizes.contains(c)) {
      out.warnings.push_back("cluster " + std::to_string(c) + " is empty and was skipped");
    }
  }
  for (const auto& [c, _] : out.sizes) out.clusters.push_back(c);

  const std::size_t d = table.elements.size();
  // Non-positive concentrations fall back to the element's smallest positive
  // value before taking log10.
  std::vector<double> floor_value(d, std::numeric_limits<double>::infinity());
  if (log10_export) {
    for (const auto& r : table.records) {
      for (std::size_t j = 0; j < d; ++j) {
        if (r.concentrations[j] > 0.0) floor_value[j] = std::min(floor_value[j], r.concentrations[j]);
      }
    }
  }

  std::vector<double> values, logs;
  for (const int c : out.clusters) {
    for (std::size_t j = 0; j < d; ++j) {
      values.clear();
      logs.clear();
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != c) continue;
        const double v = table.records[i].concentrations[j];
        values.push_back(v);
        if (log10_export) {
          const double pos = v > 0.0 ? v : floor_value[j];
          if (!std::isfinite(pos)) {
            throw DataError("element " + table.elements[j] + " has no positive value to take log10 of");
          }
          logs.push_back(std::log10(pos));
        }
      }
      ElementSummary e{c, table.elements[j], stats::box_stats(values), std::nullopt};
      if (log10_export) e.log10 = stats::box_stats(logs);
      out.entries.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace spatial_cpf::metrics
