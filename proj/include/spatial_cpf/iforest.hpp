#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spatial_cpf/error.hpp"
#include "spatial_cpf/matrix.hpp"

namespace spatial_cpf::iforest {

struct IsolationNode {
  int feature = -1;  // -1 marks a leaf
  double split = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::size_t size = 0;  // training points routed here

  bool is_leaf() const noexcept { return feature < 0; }
};

/// Binary isolation tree; nodes[0] is the root. x goes left iff
/// x[feature] < split.
struct IsolationTree {
  std::vector<IsolationNode> nodes;

  std::size_t depth() const {
    std::size_t best = 0;
    std::vector<std::pair<std::int32_t, std::size_t>> stack{{0, 0}};
    while (!stack.empty()) {
      const auto [id, d] = stack.back();
      stack.pop_back();
      const auto& node = nodes[static_cast<std::size_t>(id)];
      best = std::max(best, d);
      if (!node.is_leaf()) {
        stack.emplace_back(node.left, d + 1);
        stack.emplace_back(node.right, d + 1);
      }
    }
    return best;
  }
};

struct IsolationForestModel {
  std::vector<IsolationTree> trees;
  std::size_t subsample_size = 256;
  std::size_t n_trees = 100;
  std::uint64_t seed = 0;
  std::size_t dims = 0;
};

/// ceil(log2(psi)), the height limit of every tree.
inline std::size_t height_limit(std::size_t psi) noexcept {
  std::size_t h = 0;
  while ((std::size_t{1} << h) < psi) ++h;
  return h;
}

/// Average unsuccessful-search path length in a binary search tree of m keys.
inline double average_path_length(std::size_t m) noexcept {
  if (m <= 1) return 0.0;
  if (m == 2) return 1.0;
  double harmonic = 0.0;
  for (std::size_t i = 1; i < m; ++i) harmonic += 1.0 / static_cast<double>(i);
  const double md = static_cast<double>(m);
  return 2.0 * harmonic - 2.0 * (md - 1.0) / md;
}

/// Depth of the leaf reached by x plus the c(size) correction for the points
/// left unseparated in that leaf.
inline double path_length(const IsolationTree& tree, std::span<const double> x) {
  std::size_t id = 0;
  std::size_t depth = 0;
  while (!tree.nodes[id].is_leaf()) {
    const auto& node = tree.nodes[id];
    id = static_cast<std::size_t>(x[static_cast<std::size_t>(node.feature)] < node.split
                                      ? node.left
                                      : node.right);
    ++depth;
  }
  return static_cast<double>(depth) + average_path_length(tree.nodes[id].size);
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// std::mt19937_64 output is fully specified by the standard; the std
// distributions are not, so draws are derived from raw bits here.
class TreeRng {
 public:
  TreeRng(std::uint64_t seed, std::size_t tree_index)
      : engine_(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(tree_index) + 1))) {}

  double uniform01() noexcept { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound) by rejection.
  std::size_t below(std::size_t bound) noexcept {
    const std::uint64_t b = bound;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % b;
    std::uint64_t v = 0;
    do {
      v = engine_();
    } while (v >= limit);
    return static_cast<std::size_t>(v % b);
  }

 private:
  std::mt19937_64 engine_;
};

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, std::size_t max_depth, TreeRng& rng)
      : x_(x), max_depth_(max_depth), rng_(rng) {}

  IsolationTree build(std::vector<std::size_t> rows) {
    rows_ = std::move(rows);
    tree_.nodes.clear();
    grow(0, rows_.size(), 0);
    return std::move(tree_);
  }

 private:
  std::int32_t grow(std::size_t begin, std::size_t end, std::size_t depth) {
    const auto id = static_cast<std::int32_t>(tree_.nodes.size());
    tree_.nodes.push_back({});
    tree_.nodes.back().size = end - begin;
    if (depth >= max_depth_ || end - begin <= 1) return id;

    splittable_.clear();
    lo_.assign(x_.cols(), HUGE_VAL);
    hi_.assign(x_.cols(), -HUGE_VAL);
    for (std::size_t i = begin; i < end; ++i) {
      const auto r = x_.row(rows_[i]);
      for (std::size_t f = 0; f < r.size(); ++f) {
        lo_[f] = std::min(lo_[f], r[f]);
        hi_[f] = std::max(hi_[f], r[f]);
      }
    }
    for (std::size_t f = 0; f < x_.cols(); ++f) {
      if (hi_[f] > lo_[f]) splittable_.push_back(f);
    }
    if (splittable_.empty()) return id;

    const std::size_t f = splittable_[rng_.below(splittable_.size())];
    double split = lo_[f];
    for (int attempt = 0; attempt < 64 && !(split > lo_[f] && split < hi_[f]); ++attempt) {
      split = lo_[f] + rng_.uniform01() * (hi_[f] - lo_[f]);
    }
    if (!(split > lo_[f] && split < hi_[f])) return id;  // adjacent doubles

    const auto mid_it = std::partition(
        rows_.begin() + static_cast<std::ptrdiff_t>(begin),
        rows_.begin() + static_cast<std::ptrdiff_t>(end),
        [&](std::size_t row) { return x_(row, f) < split; });
    const auto mid = static_cast<std::size_t>(mid_it - rows_.begin());

    tree_.nodes[static_cast<std::size_t>(id)].feature = static_cast<int>(f);
    tree_.nodes[static_cast<std::size_t>(id)].split = split;
    const auto left = grow(begin, mid, depth + 1);
    const auto right = grow(mid, end, depth + 1);
    tree_.nodes[static_cast<std::size_t>(id)].left = left;
    tree_.nodes[static_cast<std::size_t>(id)].right = right;
    return id;
  }

  const Matrix& x_;
  std::size_t max_depth_;
  TreeRng& rng_;
  IsolationTree tree_;
  std::vector<std::size_t> rows_;
  std::vector<std::size_t> splittable_;
  std::vector<double> lo_, hi_;
};

}  // namespace detail

/// Trains n_trees isolation trees, each on its own subsample. Subsamples are
/// drawn without replacement, or with replacement when subsample_size > n.
inline IsolationForestModel fit_iforest(const Matrix& x, std::size_t n_trees,
                                        std::size_t subsample_size, std::uint64_t seed) {
  const std::size_t n = x.rows();
  if (n_trees == 0) throw ParameterError("n_trees must be at least 1");
  if (n < 2) throw ParameterError("isolation forest needs at least 2 samples");
  if (subsample_size < 2) throw ParameterError("subsample_size must be at least 2");
  for (const double v : x.data()) {
    if (!std::isfinite(v)) throw DataError("non-finite feature value");
  }

  IsolationForestModel model{{}, subsample_size, n_trees, seed, x.cols()};
  model.trees.reserve(n_trees);
  const std::size_t max_depth = height_limit(subsample_size);
  std::vector<std::size_t> pool(n);
  for (std::size_t t = 0; t < n_trees; ++t) {
    detail::TreeRng rng(seed, t);
    std::vector<std::size_t> rows(subsample_size);
    if (subsample_size <= n) {
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      for (std::size_t i = 0; i < subsample_size; ++i) {
        std::swap(pool[i], pool[i + rng.below(n - i)]);
      }
      std::copy_n(pool.begin(), subsample_size, rows.begin());
    } else {
      for (auto& r : rows) r = rng.below(n);
    }
    detail::TreeBuilder builder(x, max_depth, rng);
    model.trees.push_back(builder.build(std::move(rows)));
  }
  return model;
}

/// s(x) = 2^(-E[h(x)] / c(psi)).
inline std::vector<double> anomaly_scores(const IsolationForestModel& model, const Matrix& x) {
  if (x.cols() != model.dims) {
    throw ParameterError("feature dimension " + std::to_string(x.cols()) +
                         " does not match the model (" + std::to_string(model.dims) + ")");
  }
  if (model.trees.empty()) throw ParameterError("model has no trees");
  const double norm = average_path_length(model.subsample_size);
  std::vector<double> scores(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double total = 0.0;
    for (const auto& tree : model.trees) total += path_length(tree, x.row(i));
    const double mean = total / static_cast<double>(model.trees.size());
    scores[i] = std::exp2(-mean / norm);
  }
  return scores;
}

/// round_half_up(contamination * n). Products within 1e-9 below a half are
/// treated as the half, so decimal fractions like 0.3 * 995 round up as
/// they would in exact arithmetic.
inline std::size_t flag_count(std::size_t n, double contamination) {
  if (!(contamination > 0.0 && contamination < 1.0)) {
    throw ParameterError("contamination must lie in (0, 1)");
  }
  const double x = contamination * static_cast<double>(n);
  const double whole = std::floor(x);
  const double frac = x - whole;
  const auto m = static_cast<std::size_t>(whole) + (frac >= 0.5 - 1e-9 ? 1 : 0);
  return std::min(m, n);
}

/// Flags the flag_count(n, contamination) highest scores; ties at the cut go
/// to the lower index.
inline std::vector<bool> flag_outliers(std::span<const double> scores, double contamination) {
  const std::size_t m = flag_count(scores.size(), contamination);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<bool> flags(scores.size(), false);
  for (std::size_t r = 0; r < m; ++r) flags[order[r]] = true;
  return flags;
}

}  // namespace spatial_cpf::iforest
