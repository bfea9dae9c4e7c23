#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spatial_cpf/error.hpp"
#include "spatial_cpf/knn.hpp"
#include "spatial_cpf/matrix.hpp"

namespace spatial_cpf {

using Edge = std::pair<std::uint32_t, std::uint32_t>;

/// Undirected simple graph in compressed sparse row form. Neighbour lists are
/// sorted ascending and symmetric; there are no self-loops.
class SparseAdjacency {
 public:
  SparseAdjacency() = default;
  explicit SparseAdjacency(std::size_t n) : offsets_(n + 1, 0) {}

  /// Builds a graph from undirected edges. Duplicates and reversed copies
  /// collapse; self-loops and out-of-range endpoints are rejected.
  static SparseAdjacency from_edges(std::size_t n, std::span<const Edge> edges) {
    std::vector<Edge> directed;
    directed.reserve(edges.size() * 2);
    for (const auto& [u, v] : edges) {
      if (u >= n || v >= n) {
        throw ParameterError("edge (" + std::to_string(u) + ", " + std::to_string(v) +
                             ") out of range for n = " + std::to_string(n));
      }
      if (u == v) throw ParameterError("self-loop at vertex " + std::to_string(u));
      directed.emplace_back(u, v);
      directed.emplace_back(v, u);
    }
    std::sort(directed.begin(), directed.end());
    directed.erase(std::unique(directed.begin(), directed.end()), directed.end());
    return from_sorted_directed(n, directed);
  }

  static SparseAdjacency complete(std::size_t n) {
    SparseAdjacency g(n);
    g.neighbors_.reserve(n * (n > 0 ? n - 1 : 0));
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t v = 0; v < n; ++v) {
        if (u != v) g.neighbors_.push_back(static_cast<std::uint32_t>(v));
      }
      g.offsets_[u + 1] = g.neighbors_.size();
    }
    return g;
  }

  std::size_t n() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t edge_count() const noexcept { return neighbors_.size() / 2; }
  std::size_t degree(std::size_t v) const noexcept { return offsets_[v + 1] - offsets_[v]; }

  std::span<const std::uint32_t> neighbors(std::size_t v) const noexcept {
    return {neighbors_.data() + offsets_[v], degree(v)};
  }

  bool has_edge(std::size_t u, std::size_t v) const noexcept {
    if (u >= n() || v >= n()) return false;
    const auto nb = neighbors(u);
    return std::binary_search(nb.begin(), nb.end(), static_cast<std::uint32_t>(v));
  }

  /// Undirected edges as (u, v) with u < v, in ascending order.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    out.reserve(edge_count());
    for (std::size_t u = 0; u < n(); ++u) {
      for (const auto v : neighbors(u)) {
        if (u < v) out.emplace_back(static_cast<std::uint32_t>(u), v);
      }
    }
    return out;
  }

  friend bool operator==(const SparseAdjacency&, const SparseAdjacency&) = default;

 private:
  // `directed` must be sorted, duplicate-free and symmetric.
  static SparseAdjacency from_sorted_directed(std::size_t n, const std::vector<Edge>& directed) {
    SparseAdjacency g(n);
    g.neighbors_.reserve(directed.size());
    for (const auto& [u, v] : directed) {
      ++g.offsets_[u + 1];
      g.neighbors_.push_back(v);
    }
    for (std::size_t i = 0; i < n; ++i) g.offsets_[i + 1] += g.offsets_[i];
    return g;
  }

  friend SparseAdjacency hadamard_intersect(const SparseAdjacency&, const SparseAdjacency&);
  friend SparseAdjacency mutual_knn_graph(const NeighborLists&);

  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> neighbors_;
};

/// Mutual kNN graph from precomputed neighbour lists: (i, j) is an edge iff
/// each endpoint is in the other's list.
inline SparseAdjacency mutual_knn_graph(const NeighborLists& knn) {
  const std::size_t n = knn.n;
  std::vector<std::vector<std::uint32_t>> sorted(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto nb = knn.neighbors(i);
    sorted[i].assign(nb.begin(), nb.end());
    std::sort(sorted[i].begin(), sorted[i].end());
  }
  SparseAdjacency g(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto j : sorted[i]) {
      if (std::binary_search(sorted[j].begin(), sorted[j].end(), static_cast<std::uint32_t>(i))) {
        g.neighbors_.push_back(j);
      }
    }
    g.offsets_[i + 1] = g.neighbors_.size();
  }
  return g;
}

inline SparseAdjacency mutual_knn_graph(const Matrix& points, std::size_t k, Metric metric) {
  return mutual_knn_graph(knn_search(points, k, metric));
}

/// Edge-wise intersection (the element-wise product of the adjacency matrices).
inline SparseAdjacency hadamard_intersect(const SparseAdjacency& a, const SparseAdjacency& b) {
  if (a.n() != b.n()) {
    throw ParameterError("adjacency size mismatch: " + std::to_string(a.n()) + " vs " +
                         std::to_string(b.n()));
  }
  SparseAdjacency g(a.n());
  for (std::size_t v = 0; v < a.n(); ++v) {
    const auto na = a.neighbors(v);
    const auto nb = b.neighbors(v);
    std::set_intersection(na.begin(), na.end(), nb.begin(), nb.end(),
                          std::back_inserter(g.neighbors_));
    g.offsets_[v + 1] = g.neighbors_.size();
  }
  return g;
}

// Disjoint sets with path halving and union by size.
class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), size_(n, 1) {
    for (std::size_t i = 0; i < n; ++i) parent_[i] = i;
  }

  std::size_t find(std::size_t x) noexcept {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  bool unite(std::size_t a, std::size_t b) noexcept {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

/// Component id per vertex. Ids are contiguous from 0 and ordered by the
/// smallest vertex index in each component.
struct ComponentLabels {
  std::vector<std::uint32_t> labels;
  std::vector<std::size_t> sizes;

  std::size_t n() const noexcept { return labels.size(); }
  std::size_t count() const noexcept { return sizes.size(); }
};

inline ComponentLabels connected_components(const SparseAdjacency& adj) {
  const std::size_t n = adj.n();
  UnionFind uf(n);
  for (std::size_t u = 0; u < n; ++u) {
    for (const auto v : adj.neighbors(u)) {
      if (u < v) uf.unite(u, v);
    }
  }
  constexpr auto kUnset = UINT32_MAX;
  std::vector<std::uint32_t> root_label(n, kUnset);
  ComponentLabels out{std::vector<std::uint32_t>(n), {}};
  for (std::size_t v = 0; v < n; ++v) {
    auto& lbl = root_label[uf.find(v)];
    if (lbl == kUnset) {
      lbl = static_cast<std::uint32_t>(out.sizes.size());
      out.sizes.push_back(0);
    }
    out.labels[v] = lbl;
    ++out.sizes[lbl];
  }
  return out;
}

// Binary layout, all little-endian:
//   u64 vertex count | u64 edge count | edge count x (u32 u, u32 v), u < v,
//   pairs in strictly ascending lexicographic order.
namespace detail {

template <typename T>
void put_le(std::ostream& out, T v) {
  std::array<char, sizeof(T)> buf{};
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    buf[b] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * b)) & 0xFF);
  }
  out.write(buf.data(), buf.size());
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> buf{};
  if (!in.read(reinterpret_cast<char*>(buf.data()), buf.size())) {
    throw DataError("adjacency file truncated");
  }
  std::uint64_t v = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) v |= static_cast<std::uint64_t>(buf[b]) << (8 * b);
  return static_cast<T>(v);
}

}  // namespace detail

inline void write_adjacency(std::ostream& out, const SparseAdjacency& g) {
  const auto edges = g.edges();
  detail::put_le<std::uint64_t>(out, g.n());
  detail::put_le<std::uint64_t>(out, edges.size());
  for (const auto& [u, v] : edges) {
    detail::put_le<std::uint32_t>(out, u);
    detail::put_le<std::uint32_t>(out, v);
  }
  if (!out) throw IoError("failed writing adjacency");
}

inline SparseAdjacency read_adjacency(std::istream& in) {
  const auto n = detail::get_le<std::uint64_t>(in);
  const auto m = detail::get_le<std::uint64_t>(in);
  if (n > UINT32_MAX) throw DataError("adjacency vertex count too large");
  if (n > 1 && m > n * (n - 1) / 2) throw DataError("adjacency edge count exceeds n(n-1)/2");
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(m));
  for (std::uint64_t e = 0; e < m; ++e) {
    const auto u = detail::get_le<std::uint32_t>(in);
    const auto v = detail::get_le<std::uint32_t>(in);
    if (!(u < v) || v >= n) throw DataError("invalid edge at position " + std::to_string(e));
    if (!edges.empty() && !(edges.back() < Edge{u, v})) {
      throw DataError("edges not strictly ascending at position " + std::to_string(e));
    }
    edges.emplace_back(u, v);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in adjacency file");
  return SparseAdjacency::from_edges(static_cast<std::size_t>(n), edges);
}

inline void write_adjacency(const std::filesystem::path& path, const SparseAdjacency& g) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  write_adjacency(out, g);
}

inline SparseAdjacency read_adjacency(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_adjacency(in);
}

}  // namespace spatial_cpf
