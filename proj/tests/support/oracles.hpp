#pragma once

// Slow, direct reference implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <queue>
#include <set>
#include <utility>
#include <vector>

#include "spatial_cpf/graph.hpp"
#include "spatial_cpf/matrix.hpp"

namespace spatial_cpf::oracle {

inline double great_circle(double lat1, double lon1, double lat2, double lon2) {
  // Spherical law of cosines in the vector form, independent of the haversine formula.
  constexpr double d = std::numbers::pi / 180.0;
  const double a[3] = {std::cos(lat1 * d) * std::cos(lon1 * d), std::cos(lat1 * d) * std::sin(lon1 * d),
                       std::sin(lat1 * d)};
  const double b[3] = {std::cos(lat2 * d) * std::cos(lon2 * d), std::cos(lat2 * d) * std::sin(lon2 * d),
                       std::sin(lat2 * d)};
  const double cx = a[1] * b[2] - a[2] * b[1];
  const double cy = a[2] * b[0] - a[0] * b[2];
  const double cz = a[0] * b[1] - a[1] * b[0];
  const double dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
  return 6371008.8 * std::atan2(std::sqrt(cx * cx + cy * cy + cz * cz), dot);
}

/// All-pairs kNN sets; ties broken by lower index.
inline std::vector<std::vector<std::uint32_t>> brute_knn(const Matrix& p, std::size_t k, bool haversine) {
  const std::size_t n = p.rows();
  std::vector<std::vector<std::uint32_t>> out(n);
  std::vector<std::pair<double, std::uint32_t>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double dist;
      if (haversine) {
        dist = great_circle(p(i, 0), p(i, 1), p(j, 0), p(j, 1));
      } else {
        dist = 0.0;
        for (std::size_t c = 0; c < p.cols(); ++c) dist += (p(i, c) - p(j, c)) * (p(i, c) - p(j, c));
      }
      cand.emplace_back(dist, static_cast<std::uint32_t>(j));
    }
    std::sort(cand.begin(), cand.end());
    for (std::size_t r = 0; r < k; ++r) out[i].push_back(cand[r].second);
  }
  return out;
}

/// Edge set {i, j}, i < j, with i in kNN(j) and j in kNN(i).
inline std::set<std::pair<std::uint32_t, std::uint32_t>> brute_mutual_edges(const Matrix& p, std::size_t k,
                                                                           bool haversine) {
  const auto nn = brute_knn(p, k, haversine);
  std::vector<std::set<std::uint32_t>> sets(nn.size());
  for (std::size_t i = 0; i < nn.size(); ++i) sets[i] = {nn[i].begin(), nn[i].end()};
  std::set<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (std::uint32_t i = 0; i < nn.size(); ++i) {
    for (const auto j : sets[i]) {
      if (i < j && sets[j].count(i)) edges.emplace(i, j);
    }
  }
  return edges;
}

inline std::set<std::pair<std::uint32_t, std::uint32_t>> edge_set(const SparseAdjacency& g) {
  std::set<std::pair<std::uint32_t, std::uint32_t>> s;
  for (const auto& e : g.edges()) s.insert(e);
  return s;
}

/// Breadth-first component labelling, ids ordered by smallest member.
inline std::vector<std::uint32_t> bfs_components(const SparseAdjacency& g) {
  const std::size_t n = g.n();
  constexpr auto kNone = UINT32_MAX;
  std::vector<std::uint32_t> label(n, kNone);
  std::uint32_t next = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (label[s] != kNone) continue;
    std::queue<std::size_t> q;
    q.push(s);
    label[s] = next;
    while (!q.empty()) {
      const auto u = q.front();
      q.pop();
      for (const auto v : g.neighbors(u)) {
        if (label[v] == kNone) {
          label[v] = next;
          q.push(v);
        }
      }
    }
    ++next;
  }
  return label;
}

/// Calinski-Harabasz through the total scatter decomposition: W from the
/// cluster means, B = T - W with T about the grand mean. Label -1 is dropped
/// unless `keep_outliers`.
inline double calinski_harabasz(const Matrix& x, const std::vector<int>& labels, bool keep_outliers) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0 || keep_outliers) rows.push_back(i);
  }
  const std::size_t d = x.cols();
  std::map<int, std::vector<std::size_t>> groups;
  for (const auto i : rows) groups[labels[i]].push_back(i);
  std::vector<long double> grand(d, 0.0L);
  for (const auto i : rows)
    for (std::size_t c = 0; c < d; ++c) grand[c] += x(i, c);
  for (auto& g : grand) g /= static_cast<long double>(rows.size());
  long double t = 0.0L, w = 0.0L;
  for (const auto i : rows)
    for (std::size_t c = 0; c < d; ++c) t += (x(i, c) - grand[c]) * (x(i, c) - grand[c]);
  for (const auto& [lbl, members] : groups) {
    std::vector<long double> mean(d, 0.0L);
    for (const auto i : members)
      for (std::size_t c = 0; c < d; ++c) mean[c] += x(i, c);
    for (auto& m : mean) m /= static_cast<long double>(members.size());
    for (const auto i : members)
      for (std::size_t c = 0; c < d; ++c) w += (x(i, c) - mean[c]) * (x(i, c) - mean[c]);
  }
  const long double b = t - w;
  const auto n = static_cast<long double>(rows.size());
  const auto k = static_cast<long double>(groups.size());
  return static_cast<double>((b / (k - 1.0L)) / (w / (n - k)));
}

/// round(n * c) with halves rounded up, for c = num / den exactly.
inline std::size_t flag_count(std::size_t n, std::uint64_t num, std::uint64_t den) {
  const std::uint64_t p = n * num;
  return static_cast<std::size_t>((2 * p + den) / (2 * den));
}

}  // namespace spatial_cpf::oracle
