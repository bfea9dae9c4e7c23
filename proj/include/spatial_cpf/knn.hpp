#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spatial_cpf/error.hpp"
#include "spatial_cpf/matrix.hpp"

namespace spatial_cpf {

enum class Metric {
  euclidean,  // plain Euclidean distance over all columns
  haversine,  // great-circle distance; points are (latitude, longitude) in degrees
};

inline constexpr double kEarthRadiusMeters = 6371008.8;

/// Great-circle distance in metres between two (lat, lon) points in degrees.
inline double haversine_distance(double lat1, double lon1, double lat2, double lon2) noexcept {
  constexpr double deg = std::numbers::pi / 180.0;
  const double dlat = (lat2 - lat1) * deg;
  const double dlon = (lon2 - lon1) * deg;
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  const double h = s1 * s1 + std::cos(lat1 * deg) * std::cos(lat2 * deg) * s2 * s2;
  return 2.0 * kEarthRadiusMeters * std::asin(std::min(1.0, std::sqrt(h)));
}

/// k nearest neighbours of every point, excluding the point itself. Each row
/// is sorted by (distance, index), so equidistant neighbours come in
/// ascending index order.
struct NeighborLists {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> index;  // n * k
  std::vector<double> distance;      // n * k, in the metric's units

  std::span<const std::uint32_t> neighbors(std::size_t i) const noexcept {
    return {index.data() + i * k, k};
  }
  std::span<const double> distances(std::size_t i) const noexcept {
    return {distance.data() + i * k, k};
  }
  /// Distance to the k-th nearest neighbour.
  double kth_distance(std::size_t i) const noexcept { return distance[i * k + k - 1]; }
};

namespace detail {

// Static kd-tree over the rows of a matrix. Splits on the axis of largest
// spread at the median; leaves hold up to kLeafSize points.
class KdTree {
 public:
  static constexpr std::size_t kLeafSize = 16;

  explicit KdTree(const Matrix& pts) : pts_(pts), perm_(pts.rows()) {
    std::iota(perm_.begin(), perm_.end(), std::uint32_t{0});
    if (!perm_.empty()) build(0, perm_.size());
  }

  // Leaves the k best (squared distance, index) pairs for row q, excluding q
  // itself, in `heap` sorted ascending.
  void query(std::size_t q, std::size_t k, std::vector<std::pair<double, std::uint32_t>>& heap) const {
    heap.clear();
    search(0, q, k, heap);
    std::sort_heap(heap.begin(), heap.end());
  }

 private:
  struct Node {
    std::size_t begin = 0, end = 0;
    std::size_t axis = 0;
    double split = 0.0;
    std::int32_t left = -1, right = -1;
  };

  std::int32_t build(std::size_t begin, std::size_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;

    const std::size_t d = pts_.cols();
    std::size_t axis = 0;
    double best_spread = -1.0;
    for (std::size_t a = 0; a < d; ++a) {
      double lo = HUGE_VAL, hi = -HUGE_VAL;
      for (std::size_t i = begin; i < end; ++i) {
        const double v = pts_(perm_[i], a);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > best_spread) {
        best_spread = hi - lo;
        axis = a;
      }
    }
    if (!(best_spread > 0.0)) return id;  // all points coincide

    const std::size_t mid = begin + (end - begin) / 2;
    auto first = perm_.begin() + static_cast<std::ptrdiff_t>(begin);
    std::nth_element(first, perm_.begin() + static_cast<std::ptrdiff_t>(mid),
                     perm_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::uint32_t a, std::uint32_t b) {
                       const double va = pts_(a, axis), vb = pts_(b, axis);
                       return va < vb || (va == vb && a < b);
                     });
    nodes_[id].axis = axis;
    nodes_[id].split = pts_(perm_[mid], axis);
    const auto l = build(begin, mid);
    const auto r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  void search(std::int32_t id, std::size_t q, std::size_t k,
              std::vector<std::pair<double, std::uint32_t>>& heap) const {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    const auto qrow = pts_.row(q);
    if (node.left < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::uint32_t j = perm_[i];
        if (j == q) continue;
        const std::pair<double, std::uint32_t> cand{squared_distance(qrow, pts_.row(j)), j};
        if (heap.size() < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end());
        } else if (cand < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const double diff = qrow[node.axis] - node.split;
    const auto near = diff < 0.0 ? node.left : node.right;
    const auto far = diff < 0.0 ? node.right : node.left;
    search(near, q, k, heap);
    // Points on the far side are at least |diff| away; equality must still be
    // visited because a tied distance with a lower index may live there.
    if (heap.size() < k || diff * diff <= heap.front().first) search(far, q, k, heap);
  }

  const Matrix& pts_;
  std::vector<std::uint32_t> perm_;
  std::vector<Node> nodes_;
};

inline Matrix unit_sphere_embedding(const Matrix& latlon) {
  constexpr double deg = std::numbers::pi / 180.0;
  Matrix out(latlon.rows(), 3);
  for (std::size_t i = 0; i < latlon.rows(); ++i) {
    const double lat = latlon(i, 0) * deg;
    const double lon = latlon(i, 1) * deg;
    out(i, 0) = std::cos(lat) * std::cos(lon);
    out(i, 1) = std::cos(lat) * std::sin(lon);
    out(i, 2) = std::sin(lat);
  }
  return out;
}

inline void validate_points(const Matrix& points, std::size_t k, Metric metric) {
  const std::size_t n = points.rows();
  if (n < 2) throw ParameterError("need at least 2 points, got " + std::to_string(n));
  if (k < 1) throw ParameterError("k must be at least 1");
  if (k >= n) {
    throw ParameterError("k (" + std::to_string(k) + ") must be smaller than the number of points (" +
                         std::to_string(n) + ")");
  }
  if (n > UINT32_MAX) throw ParameterError("too many points");
  if (metric == Metric::haversine && points.cols() != 2) {
    throw ParameterError("haversine metric requires 2 columns (latitude, longitude)");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < points.cols(); ++j) {
      if (!std::isfinite(points(i, j))) {
        throw DataError("non-finite coordinate at row " + std::to_string(i));
      }
    }
    if (metric == Metric::haversine &&
        (std::abs(points(i, 0)) > 90.0 || std::abs(points(i, 1)) > 180.0)) {
      throw DataError("latitude/longitude out of range at row " + std::to_string(i));
    }
  }
}

}  // namespace detail

/// Exact k-nearest-neighbour lists for every row of `points`.
inline NeighborLists knn_search(const Matrix& points, std::size_t k, Metric metric) {
  detail::validate_points(points, k, metric);
  const std::size_t n = points.rows();
  const Matrix embedded =
      metric == Metric::haversine ? detail::unit_sphere_embedding(points) : Matrix{};
  const Matrix& space = metric == Metric::haversine ? embedded : points;
  const detail::KdTree tree(space);

  NeighborLists out{n, k, std::vector<std::uint32_t>(n * k), std::vector<double>(n * k)};
  std::vector<std::pair<double, std::uint32_t>> heap;
  heap.reserve(k + 1);
  for (std::size_t i = 0; i < n; ++i) {
    tree.query(i, k, heap);
    for (std::size_t r = 0; r < k; ++r) {
      const auto [d2, j] = heap[r];
      out.index[i * k + r] = j;
      // chord length c on the unit sphere -> central angle 2 asin(c / 2)
      out.distance[i * k + r] =
          metric == Metric::haversine
              ? 2.0 * kEarthRadiusMeters * std::asin(std::min(1.0, std::sqrt(d2) / 2.0))
              : std::sqrt(d2);
    }
  }
  return out;
}

}  // namespace spatial_cpf
