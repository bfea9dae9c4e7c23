#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "spatial_cpf/cpf.hpp"
#include "spatial_cpf/ingest.hpp"
#include "support/synthetic.hpp"

using namespace spatial_cpf;
using namespace spatial_cpf::cpf;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Matrix column(std::initializer_list<double> xs) {
  Matrix m(xs.size(), 1);
  std::size_t i = 0;
  for (double x : xs) m(i++, 0) = x;
  return m;
}

ComponentLabels one_component(std::size_t n) {
  return {std::vector<std::uint32_t>(n, 0), {n}};
}

ComponentLabels singletons(std::size_t n) {
  ComponentLabels c{std::vector<std::uint32_t>(n), std::vector<std::size_t>(n, 1)};
  std::iota(c.labels.begin(), c.labels.end(), 0u);
  return c;
}

DensityEstimate with_log_density(std::vector<double> ld) {
  DensityEstimate d;
  d.r_k.assign(ld.size(), 1.0);
  d.log_density = std::move(ld);
  return d;
}

// Reference big brother: full scan over the component.
BigBrother brute_big_brother(const Matrix& x, const std::vector<double>& ld, const ComponentLabels& c) {
  const std::size_t n = x.rows();
  BigBrother bb{std::vector<std::size_t>(n, kNoParent), std::vector<double>(n, kInf)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (c.labels[j] != c.labels[i]) continue;
      if (!(ld[j] > ld[i] || (ld[j] == ld[i] && j < i))) continue;
      const double d = std::sqrt(squared_distance(x.row(i), x.row(j)));
      if (d < bb.omega[i]) {
        bb.omega[i] = d;
        bb.parent[i] = j;
      }
    }
  }
  return bb;
}

// Clusters as sets of sample ids (outliers under key -1).
std::set<std::set<std::string>> partition(const std::vector<int>& labels,
                                          const std::vector<std::string>& ids) {
  std::map<int, std::set<std::string>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].insert(ids[i]);
  std::set<std::set<std::string>> out;
  for (auto& [l, g] : groups) {
    if (l >= 0) out.insert(g);
  }
  return out;
}

struct Survey {
  Matrix features;
  Matrix latlon;
};

// Scaled synthetic survey with positions on the sphere.
Survey synthetic_survey(std::size_t n, std::uint64_t seed) {
  std::istringstream in(synth::synthetic_g5_csv(n, seed));
  const auto t = parse_g5_csv(in);
  auto f = select_features(t);
  for (std::size_t i = 0; i < f.rows(); ++i)
    for (std::size_t j = 0; j < f.cols(); ++j) f.values(i, j) = std::log10(f.values(i, j));
  Survey s{standardize(f, ScalingMethod::zscore).first.values, Matrix(n, 2)};
  for (std::size_t i = 0; i < n; ++i) {
    // Local planar approximation is enough for a graph test.
    s.latlon(i, 0) = 53.5 + (t.records[i].northing - 750000.0) / 111000.0;
    s.latlon(i, 1) = -8.0 + (t.records[i].easting - 600000.0) / 66000.0;
  }
  return s;
}

}  // namespace

// --- density -----------------------------------------------------------

TEST(Density, RankingIsReverseOfRadius) {
  const auto x = synth::gaussian_points(120, 3, 4);
  const auto d = knn_density(knn_search(x, 7, Metric::euclidean), 3);
  for (std::size_t i = 0; i < 120; ++i) {
    for (std::size_t j = 0; j < 120; ++j) {
      if (d.r_k[i] < d.r_k[j]) {
        EXPECT_GT(d.log_density[i], d.log_density[j]);
      }
    }
  }
}

TEST(Density, GridCentreDenserThanCorners) {
  Matrix g(9, 2);
  for (std::size_t i = 0; i < 9; ++i) {
    g(i, 0) = static_cast<double>(i % 3);
    g(i, 1) = static_cast<double>(i / 3);
  }
  CpfParams p;
  p.min_samples = 3;
  const auto d = knn_density(g, p);
  EXPECT_DOUBLE_EQ(d.r_k[4], 1.0);
  for (std::size_t corner : {0u, 2u, 6u, 8u}) {
    EXPECT_DOUBLE_EQ(d.r_k[corner], std::sqrt(2.0));
    EXPECT_GT(d.log_density[4], d.log_density[corner]);
  }
}

TEST(Density, MatchesClosedForm) {
  // log(k / (n * V_d * r^d)) with V_2 = pi.
  const auto x = column({0.0, 1.0, 3.0, 7.0});
  const auto d = knn_density(knn_search(x, 1, Metric::euclidean), 1);
  EXPECT_NEAR(d.log_density[3], std::log(1.0 / (4.0 * 2.0 * 4.0)), 1e-12);
  EXPECT_NEAR(log_unit_ball_volume(2), std::log(std::numbers::pi), 1e-12);
  EXPECT_NEAR(log_unit_ball_volume(3), std::log(4.0 / 3.0 * std::numbers::pi), 1e-12);
}

TEST(Density, DuplicatePointsGetWarningAndEqualFiniteDensity) {
  auto x = synth::uniform_points(10, 2, 6);
  x(7, 0) = x(3, 0);
  x(7, 1) = x(3, 1);
  const auto d = knn_density(knn_search(x, 1, Metric::euclidean), 2);
  ASSERT_EQ(d.warnings.size(), 1u);
  EXPECT_TRUE(std::isfinite(d.log_density[3]));
  EXPECT_EQ(d.log_density[3], d.log_density[7]);
  double min_other = kInf;
  for (std::size_t i = 0; i < 10; ++i)
    if (i != 3 && i != 7) min_other = std::min(min_other, d.r_k[i]);
  EXPECT_DOUBLE_EQ(d.r_k[3], min_other * 1e-3);
}

TEST(Density, TooFewSamplesNamesMinSamples) {
  CpfParams p;
  p.min_samples = 10;
  try {
    knn_density(synth::uniform_points(10, 2, 1), p);
    FAIL();
  } catch (const ParameterError& e) {
    EXPECT_NE(std::string(e.what()).find("min_samples"), std::string::npos);
  }
}

// --- big brother ---------------------------------------------------------

TEST(BigBrotherTest, SingletonHasInfiniteOmega) {
  const auto bb = big_brother(column({4.0}), with_log_density({1.0}), one_component(1));
  EXPECT_EQ(bb.parent[0], kNoParent);
  EXPECT_EQ(bb.omega[0], kInf);
}

TEST(BigBrotherTest, CollinearExample) {
  const auto bb = big_brother(column({0.0, 1.0, 3.0}), with_log_density({3.0, 2.0, 1.0}), one_component(3));
  EXPECT_EQ(bb.parent[0], kNoParent);
  EXPECT_EQ(bb.parent[1], 0u);
  EXPECT_EQ(bb.parent[2], 1u);
  EXPECT_DOUBLE_EQ(bb.omega[1], 1.0);
  EXPECT_DOUBLE_EQ(bb.omega[2], 2.0);
}

TEST(BigBrotherTest, EqualDensitiesChainByIndex) {
  const auto bb = big_brother(column({0.0, 1.0, 2.0, 3.0, 4.0}), with_log_density(std::vector<double>(5, 0.5)),
                              one_component(5));
  EXPECT_EQ(bb.parent[0], kNoParent);
  for (std::size_t i = 1; i < 5; ++i) EXPECT_EQ(bb.parent[i], i - 1);
}

TEST(BigBrotherTest, NeverCrossesComponents) {
  const auto bb = big_brother(column({0.0, 0.1, 5.0}), with_log_density({1.0, 2.0, 3.0}),
                              {{0, 1, 0}, {2, 1}});
  EXPECT_EQ(bb.parent[0], 2u);
  EXPECT_EQ(bb.parent[1], kNoParent);
}

TEST(BigBrotherProperty, NeighbourShortcutMatchesFullScan) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto x = synth::gaussian_points(300, 4, s);
    const auto knn = knn_search(x, 10, Metric::euclidean);
    const auto g = mutual_knn_graph(knn);
    const auto comps = connected_components(g);
    const auto d = knn_density(knn, 4);
    const auto with = big_brother(x, d, comps, &knn);
    const auto without = big_brother(x, d, comps);
    const auto ref = brute_big_brother(x, d.log_density, comps);
    EXPECT_EQ(with.parent, ref.parent);
    EXPECT_EQ(without.parent, ref.parent);
    for (std::size_t i = 0; i < 300; ++i) {
      if (std::isinf(ref.omega[i])) {
        EXPECT_EQ(with.omega[i], ref.omega[i]);
      } else {
        EXPECT_NEAR(with.omega[i], ref.omega[i], 1e-12);
      }
    }
  }
}

// --- centres and assignment ---------------------------------------------

TEST(Centers, EqualOmegasGiveOnlyTheMaximum) {
  const auto d = with_log_density({5.0, 4.0, 3.0, 2.0, 1.0});
  BigBrother bb{{kNoParent, 0, 1, 2, 3}, {kInf, 1.0, 1.0, 1.0, 1.0}};
  CpfParams p;
  p.min_samples = 1;
  EXPECT_EQ(select_centers(d, bb, one_component(5), p), (std::vector<std::size_t>{0}));
}

TEST(Centers, SmallComponentsAreGated) {
  const auto d = with_log_density({1.0, 2.0, 3.0});
  BigBrother bb{{kNoParent, kNoParent, kNoParent}, {kInf, kInf, kInf}};
  CpfParams p;
  p.min_samples = 2;
  EXPECT_TRUE(select_centers(d, bb, singletons(3), p).empty());
  p.min_component_size = 1;
  EXPECT_EQ(select_centers(d, bb, singletons(3), p).size(), 3u);
}

TEST(Centers, TwoBlobsJoinedByABridge) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  Matrix x(40, 2);
  for (std::size_t i = 0; i < 40; ++i) {
    x(i, 0) = z(rng) + (i < 20 ? 0.0 : 20.0);
    x(i, 1) = z(rng);
  }
  std::vector<Edge> edges;
  for (std::uint32_t a = 0; a < 40; ++a)
    for (std::uint32_t b = a + 1; b < 40; ++b)
      if ((a < 20) == (b < 20)) edges.emplace_back(a, b);
  edges.emplace_back(19, 20);
  const auto comps = connected_components(SparseAdjacency::from_edges(40, edges));
  ASSERT_EQ(comps.count(), 1u);

  CpfParams p;
  p.min_samples = 5;
  const auto d = knn_density(x, p);
  const auto bb = brute_big_brother(x, d.log_density, comps);
  const auto centers = select_centers(d, bb, comps, p);
  ASSERT_EQ(centers.size(), 2u);
  EXPECT_NE(centers[0] < 20, centers[1] < 20);

  const auto lab = assign_clusters(bb, centers, comps, 1);
  ASSERT_EQ(lab.cluster_count(), 2u);
  for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(lab.labels[i], lab.labels[i < 20 ? 0 : 39]);
  EXPECT_NE(lab.labels[0], lab.labels[39]);
}

TEST(Assign, SingleCentreLabelsEverything) {
  BigBrother bb{{kNoParent, 0, 1, 1}, {kInf, 1, 1, 2}};
  const std::vector<std::size_t> centers{0};
  const auto lab = assign_clusters(bb, centers, one_component(4), 1);
  EXPECT_EQ(lab.labels, (std::vector<int>{0, 0, 0, 0}));
  EXPECT_EQ(lab.sizes, (std::vector<std::size_t>{4}));
}

TEST(Assign, GatedSingletonsAreOutliers) {
  BigBrother bb{std::vector<std::size_t>(10, kNoParent), std::vector<double>(10, kInf)};
  std::vector<std::size_t> centers(10);
  std::iota(centers.begin(), centers.end(), 0u);
  const auto lab = assign_clusters(bb, centers, singletons(10), 2);
  EXPECT_EQ(lab.labels, std::vector<int>(10, -1));
  EXPECT_EQ(lab.cluster_count(), 0u);
}

TEST(Assign, LabelsOrderedBySizeThenFirstMember) {
  // Centres 0 and 3; cluster of 3 has three members.
  BigBrother bb{{kNoParent, 0, kNoParent, kNoParent, 3, 3}, {kInf, 1, kInf, kInf, 1, 1}};
  const std::vector<std::size_t> centers{0, 2, 3};
  const auto lab = assign_clusters(bb, centers, one_component(6), 1);
  EXPECT_EQ(lab.labels, (std::vector<int>{1, 1, 2, 0, 0, 0}));
}

TEST(Assign, BrokenChainIsConsistencyError) {
  BigBrother bb{{kNoParent, kNoParent, 1}, {kInf, kInf, 1}};
  const std::vector<std::size_t> centers{0};
  EXPECT_THROW(assign_clusters(bb, centers, one_component(3), 1), ConsistencyError);
}

// --- merging -----------------------------------------------------------

namespace {

struct MergeCase {
  Matrix x;
  DensityEstimate d;
  std::vector<std::size_t> centers;
  ClusterLabeling lab;
};

// Each sample is its own centre and cluster.
MergeCase merge_case(std::initializer_list<double> pos, std::vector<double> ld) {
  MergeCase m{column(pos), with_log_density(std::move(ld)), {}, {}};
  const std::size_t n = m.x.rows();
  m.centers.resize(n);
  std::iota(m.centers.begin(), m.centers.end(), 0u);
  m.lab.labels.resize(n);
  std::iota(m.lab.labels.begin(), m.lab.labels.end(), 0);
  m.lab.sizes.assign(n, 1);
  return m;
}

}  // namespace

TEST(Merge, ZeroThresholdLeavesLabelsUnchanged) {
  auto m = merge_case({0.0, 0.5, 1.0}, {1.0, 1.0, 1.0});
  CpfParams p;
  p.merge_threshold = 0.0;
  EXPECT_EQ(merge_clusters(m.lab, m.centers, m.d, m.x, p).labels, m.lab.labels);
}

TEST(Merge, RatioOneWithDistinctDensitiesLeavesLabelsUnchanged) {
  auto m = merge_case({0.0, 0.5, 1.0}, {1.0, 1.1, 1.2});
  CpfParams p;
  p.density_ratio_threshold = 1.0;
  EXPECT_EQ(merge_clusters(m.lab, m.centers, m.d, m.x, p).labels, m.lab.labels);
}

TEST(Merge, CloseCentresWithSimilarDensityMerge) {
  auto m = merge_case({0.0, 1.0}, {0.0, std::log(0.9)});
  CpfParams p;
  p.merge_threshold = 2.0;
  p.density_ratio_threshold = 0.7;
  const auto out = merge_clusters(m.lab, m.centers, m.d, m.x, p);
  EXPECT_EQ(out.cluster_count(), 1u);
  EXPECT_EQ(out.labels, (std::vector<int>{0, 0}));

  p.merge_threshold = 0.99;
  EXPECT_EQ(merge_clusters(m.lab, m.centers, m.d, m.x, p).cluster_count(), 2u);
  p.merge_threshold = 2.0;
  p.density_ratio_threshold = 0.95;
  EXPECT_EQ(merge_clusters(m.lab, m.centers, m.d, m.x, p).cluster_count(), 2u);
}

TEST(Merge, ClosedTransitively) {
  // 0-1 and 1-2 qualify; 0-2 is too far apart on its own.
  auto m = merge_case({0.0, 1.0, 2.0, 10.0}, {0.0, 0.0, 0.0, 0.0});
  CpfParams p;
  p.merge_threshold = 1.5;
  const auto out = merge_clusters(m.lab, m.centers, m.d, m.x, p);
  EXPECT_EQ(out.labels, (std::vector<int>{0, 0, 0, 1}));
  EXPECT_EQ(out.sizes, (std::vector<std::size_t>{3, 1}));
}

// --- fit ---------------------------------------------------------------

TEST(Fit, IdenticalColocatedPointsFormOneCluster) {
  // With every distance tied, the index tie rule makes the k+1 points one clique.
  const std::size_t k = 6, n = k + 1;
  Matrix x(n, 15, 2.0), geo(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    geo(i, 0) = 53.5;
    geo(i, 1) = -8.0;
  }
  CpfParams p;
  p.min_samples = k;
  const auto r = fit(x, mutual_knn_graph(geo, k, Metric::haversine), p);
  EXPECT_EQ(r.labeling.cluster_count(), 1u);
  EXPECT_EQ(r.labeling.outlier_count(), 0u);
  EXPECT_FALSE(r.density.warnings.empty());
}

TEST(Fit, TwoSeparatedBlobsRecovered) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto b = synth::two_blobs(400, 15, 20.0, seed);
    CpfParams p;
    p.min_samples = 150;
    p.rho = 0.5;
    const auto r = fit(b.features, mutual_knn_graph(b.latlon, 150, Metric::haversine), p);
    ASSERT_EQ(r.labeling.cluster_count(), 2u) << seed;
    EXPECT_EQ(r.labeling.outlier_count(), 0u);
    for (std::size_t i = 0; i < 400; ++i) {
      EXPECT_EQ(r.labeling.labels[i] == r.labeling.labels[0], b.truth[i] == b.truth[0]);
    }
  }
}

TEST(Fit, RejectsBadInputs) {
  const auto x = synth::uniform_points(20, 2, 1);
  CpfParams p;
  p.min_samples = 20;
  EXPECT_THROW(fit(x, SparseAdjacency(20), p), ParameterError);
  p.min_samples = 5;
  EXPECT_THROW(fit(x, SparseAdjacency(19), p), ParameterError);
  p.rho = 1.5;
  EXPECT_THROW(fit(x, SparseAdjacency(20), p), ParameterError);
}

// --- invariants ----------------------------------------------------------

class FitInvariants : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(FitInvariants, StructuralInvariants) {
  const auto s = synthetic_survey(900, GetParam());
  CpfParams p;
  p.min_samples = 20;
  const auto geo = mutual_knn_graph(s.latlon, p.min_samples, Metric::haversine);
  const auto r = fit(s.features, geo, p);
  const std::size_t n = s.features.rows();

  // Outliers are exactly the members of components below the size gate.
  std::size_t small_mass = 0;
  for (const auto sz : r.components.sizes)
    if (sz < p.component_size_gate()) small_mass += sz;
  EXPECT_EQ(r.labeling.outlier_count(), small_mass);
  for (std::size_t i = 0; i < n; ++i) {
    const bool small = r.components.sizes[r.components.labels[i]] < p.component_size_gate();
    EXPECT_EQ(r.labeling.labels[i] == kOutlier, small);
  }

  // Sizes are descending and account for every labelled sample.
  EXPECT_TRUE(std::is_sorted(r.labeling.sizes.rbegin(), r.labeling.sizes.rend()));
  EXPECT_EQ(std::accumulate(r.labeling.sizes.begin(), r.labeling.sizes.end(), std::size_t{0}),
            n - r.labeling.outlier_count());

  // Before merging, every cluster sits inside one component and each
  // qualifying component holds its density maximum as a centre.
  std::map<int, std::set<std::uint32_t>> comps_of;
  for (std::size_t i = 0; i < n; ++i)
    if (r.unmerged.labels[i] >= 0) comps_of[r.unmerged.labels[i]].insert(r.components.labels[i]);
  for (const auto& [l, cs] : comps_of) EXPECT_EQ(cs.size(), 1u);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isinf(r.big_brother.omega[i]) &&
        r.components.sizes[r.components.labels[i]] >= p.component_size_gate()) {
      EXPECT_TRUE(std::binary_search(r.centers.begin(), r.centers.end(), i));
    }
  }

  // Merging only coarsens the partition.
  std::map<int, std::set<int>> merged_into;
  for (std::size_t i = 0; i < n; ++i) merged_into[r.unmerged.labels[i]].insert(r.labeling.labels[i]);
  for (const auto& [l, targets] : merged_into) EXPECT_EQ(targets.size(), 1u);

  // Every retained edge is in both graphs.
  for (const auto& [u, v] : r.graph.edges()) EXPECT_TRUE(geo.has_edge(u, v));
}

TEST_P(FitInvariants, Deterministic) {
  const auto s = synthetic_survey(600, GetParam());
  CpfParams p;
  p.min_samples = 15;
  const auto geo = mutual_knn_graph(s.latlon, p.min_samples, Metric::haversine);
  const auto a = fit(s.features, geo, p);
  const auto b = fit(s.features, geo, p);
  EXPECT_EQ(a.labeling.labels, b.labeling.labels);
  EXPECT_EQ(a.density.log_density, b.density.log_density);
  EXPECT_EQ(a.big_brother.omega, b.big_brother.omega);
  EXPECT_EQ(a.centers, b.centers);
}

TEST_P(FitInvariants, PermutationEquivariant) {
  const auto s = synthetic_survey(600, GetParam());
  const std::size_t n = s.features.rows();
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = std::to_string(i);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(GetParam() + 99));
  std::vector<std::string> perm_ids(n);
  for (std::size_t i = 0; i < n; ++i) perm_ids[i] = ids[perm[i]];

  CpfParams p;
  p.min_samples = 15;
  const auto a = fit(s.features, mutual_knn_graph(s.latlon, 15, Metric::haversine), p);
  const auto fp = s.features.select_rows(perm), gp = s.latlon.select_rows(perm);
  const auto b = fit(fp, mutual_knn_graph(gp, 15, Metric::haversine), p);
  EXPECT_EQ(partition(a.labeling.labels, ids), partition(b.labeling.labels, perm_ids));
  EXPECT_EQ(a.labeling.sizes, b.labeling.sizes);
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_EQ(a.labeling.labels[perm[i]] == kOutlier, b.labeling.labels[i] == kOutlier);
  }
}

TEST_P(FitInvariants, ClusterCountNonIncreasingInMergeThreshold) {
  const auto s = synthetic_survey(600, GetParam());
  CpfParams p;
  p.min_samples = 12;
  p.min_component_size = 5;
  p.density_ratio_threshold = 0.3;
  const auto geo = mutual_knn_graph(s.latlon, p.min_samples, Metric::haversine);
  std::size_t prev = SIZE_MAX;
  for (double t : {0.0, 1.0, 2.5, 5.0, 7.5}) {
    p.merge_threshold = t;
    const auto c = fit(s.features, geo, p).labeling.cluster_count();
    EXPECT_LE(c, prev) << "merge_threshold " << t;
    prev = c;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, FitInvariants, ::testing::Values(1u, 2u, 3u));
