#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "collapse/detector.hpp"
#include "collapse/errors.hpp"
#include "collapse/rng.hpp"
#include "collapse/snapshot_io.hpp"

using namespace collapse;

namespace {

// Two dense layers: `hidden` (width x in) followed by `out` (out x width),
// so hidden neurons have both an incoming row and an outgoing column.
WeightSnapshot two_layer_snapshot(const Eigen::MatrixXd& hidden_w,
                                  const Eigen::VectorXd& hidden_b,
                                  const Eigen::MatrixXd& out_w) {
  WeightSnapshot snap;
  SnapshotLayer hidden;
  hidden.name = "hidden";
  hidden.in_dim = hidden_w.cols();
  hidden.out_dim = hidden_w.rows();
  hidden.incoming = hidden_w;
  hidden.bias = hidden_b;
  snap.layers.push_back(hidden);
  SnapshotLayer out;
  out.name = "out";
  out.in_dim = out_w.cols();
  out.out_dim = out_w.rows();
  out.incoming = out_w;
  out.bias = Eigen::VectorXd::Zero(out_w.rows());
  snap.layers.push_back(out);
  return snap;
}

// width neurons arranged in n_groups exact-duplicate groups, with the last
// n_dead neurons zeroed out entirely.
WeightSnapshot planted_snapshot(Eigen::Index width, int n_groups, int n_dead,
                                std::uint64_t seed) {
  const Eigen::Index in = 6;
  const Eigen::Index out = 4;
  Eigen::MatrixXd hw = Eigen::MatrixXd::Zero(width, in);
  Eigen::VectorXd hb = Eigen::VectorXd::Zero(width);
  Eigen::MatrixXd ow = Eigen::MatrixXd::Zero(out, width);
  for (Eigen::Index i = 0; i < width - n_dead; ++i) {
    const int g = static_cast<int>(i) % n_groups;
    auto grng = Xoshiro256pp(derive_stream_seed(seed, g));
    for (Eigen::Index c = 0; c < in; ++c) hw(i, c) = grng.normal();
    hb(i) = grng.normal();
    for (Eigen::Index r = 0; r < out; ++r) ow(r, i) = grng.normal();
  }
  return two_layer_snapshot(hw, hb, ow);
}

Eigen::VectorXd vec(std::initializer_list<double> values) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

}  // namespace

TEST_CASE("normalized distance on pinned vector pairs") {
  const Eigen::VectorXd w = vec({1.0, -2.0, 0.5});
  CHECK(normalized_distance(w, w) == 0.0);
  CHECK(normalized_distance(w, -w) == doctest::Approx(4.0).epsilon(1e-15));

  const Eigen::VectorXd a = vec({3.0, 0.0});
  const Eigen::VectorXd b = vec({0.0, 3.0});
  CHECK(normalized_distance(a, b) == doctest::Approx(2.0).epsilon(1e-15));

  // dist(w, c w) = 2 (1-c)^2 / (1+c^2), invariant under c -> 1/c.
  for (double c : {2.0, 0.5}) {
    const Eigen::VectorXd scaled = c * w;
    CHECK(normalized_distance(w, scaled) ==
          doctest::Approx(2.0 * (1.0 - c) * (1.0 - c) / (1.0 + c * c))
              .epsilon(1e-14));
  }

  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  CHECK(normalized_distance(zero, zero) == 0.0);
  CHECK(normalized_distance(w, zero) == doctest::Approx(2.0).epsilon(1e-15));

  CHECK_THROWS_AS(normalized_distance(w, vec({1.0, 2.0})), ConfigError);

  // Global rescaling of both vectors never changes the distance.
  const Eigen::VectorXd u = vec({0.3, 1.1, -0.7});
  CHECK(normalized_distance(5.0 * w, 5.0 * u) ==
        doctest::Approx(normalized_distance(w, u)).epsilon(1e-14));
}

TEST_CASE("pairwise distances on a hand-computed two-neuron layer") {
  Eigen::MatrixXd hw(2, 2);
  hw << 1.0, 0.0, 0.0, 1.0;
  const Eigen::VectorXd hb = vec({1.0, 1.0});
  Eigen::MatrixXd ow(2, 2);
  ow << 1.0, 1.0, 1.0, -1.0;  // columns (1,1) and (1,-1)
  const WeightSnapshot snap = two_layer_snapshot(hw, hb, ow);

  PairwiseOptions opts;
  opts.which = DistanceBasis::concat;
  const DistanceMatrix concat = pairwise_matrix(snap, "hidden", opts);
  REQUIRE(concat.n() == 2);
  // Features (1,0,1,1,1) and (0,1,1,1,-1): diff norm^2 6, norms^2 4 and 4.
  CHECK(concat.entries(0, 1) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(concat.entries(1, 0) == concat.entries(0, 1));
  CHECK(concat.entries(0, 0) == 0.0);

  opts.which = DistanceBasis::incoming;
  const DistanceMatrix inc = pairwise_matrix(snap, "hidden", opts);
  CHECK(inc.entries(0, 1) == doctest::Approx(1.0).epsilon(1e-15));

  opts.which = DistanceBasis::outgoing;
  const DistanceMatrix outg = pairwise_matrix(snap, "hidden", opts);
  CHECK(outg.entries(0, 1) == doctest::Approx(2.0).epsilon(1e-15));

  // Dropping the bias removes one matching coordinate from the concat
  // features: diff stays 6, norms drop to 3 each.
  opts.which = DistanceBasis::concat;
  opts.include_bias = false;
  const DistanceMatrix nobias = pairwise_matrix(snap, "hidden", opts);
  CHECK(nobias.entries(0, 1) == doctest::Approx(2.0).epsilon(1e-15));

  // The final layer has no outgoing columns.
  opts.include_bias = true;
  CHECK_THROWS_AS(pairwise_matrix(snap, "out", opts), ConfigError);
  opts.which = DistanceBasis::incoming;
  CHECK_NOTHROW(pairwise_matrix(snap, "out", opts));
  CHECK_THROWS_AS(pairwise_matrix(snap, "missing", opts), ConfigError);
}

TEST_CASE("skip connections extend the concat feature with the source triple") {
  // Three layers of width 2 with a skip from `h1` into `h2`. Neurons of h2
  // then compare (row, bias, out column, h1 row, h1 bias, h1 out column).
  WeightSnapshot snap;
  const auto add_layer = [&](const char* name, const Eigen::MatrixXd& w,
                             const Eigen::VectorXd& b) {
    SnapshotLayer l;
    l.name = name;
    l.in_dim = w.cols();
    l.out_dim = w.rows();
    l.incoming = w;
    l.bias = b;
    snap.layers.push_back(l);
  };
  Eigen::MatrixXd w1(2, 2), w2(2, 2), w3(2, 2);
  w1 << 1.0, 0.0, 0.0, -1.0;
  w2 << 0.5, 0.5, 0.5, 0.5;
  w3 << 2.0, 2.0, 2.0, 2.0;
  add_layer("h1", w1, vec({0.0, 0.0}));
  add_layer("h2", w2, vec({0.0, 0.0}));
  add_layer("out", w3, vec({0.0, 0.0}));
  snap.layers[1].residual_from = "h1";

  PairwiseOptions opts;
  opts.which = DistanceBasis::concat;
  const DistanceMatrix with_link = pairwise_matrix(snap, "h2", opts);

  WeightSnapshot plain = snap;
  plain.layers[1].residual_from.reset();
  const DistanceMatrix no_link = pairwise_matrix(plain, "h2", opts);

  // Without the link the two h2 neurons are exact duplicates; the link's
  // source triples differ, which the concat feature must expose.
  CHECK(no_link.entries(0, 1) == 0.0);
  CHECK(with_link.entries(0, 1) > 0.1);

  // Incoming and outgoing bases ignore the link by construction.
  opts.which = DistanceBasis::incoming;
  CHECK(pairwise_matrix(snap, "h2", opts).entries(0, 1) ==
        pairwise_matrix(plain, "h2", opts).entries(0, 1));
}

TEST_CASE("pairwise matrices are symmetric with a zero diagonal") {
  const WeightSnapshot snap = planted_snapshot(17, 5, 2, 99);
  const DistanceMatrix m = pairwise_matrix(snap, "hidden");
  for (Eigen::Index i = 0; i < m.n(); ++i) {
    CHECK(m.entries(i, i) == 0.0);
    for (Eigen::Index j = 0; j < m.n(); ++j) {
      CHECK(m.entries(i, j) == m.entries(j, i));
      CHECK(m.entries(i, j) >= 0.0);
      CHECK(m.entries(i, j) <= 4.0);
    }
  }
}

TEST_CASE("vanishing filter uses a strict fraction of the largest row") {
  Eigen::MatrixXd hw(3, 1);
  hw << 10.0, 10.0, 0.5;
  const WeightSnapshot snap =
      two_layer_snapshot(hw, Eigen::VectorXd::Zero(3),
                         Eigen::MatrixXd::Ones(2, 3));
  const auto v = filter_vanishing(snap, "hidden", 0.1);
  REQUIRE(v.size() == 1);
  CHECK(v[0] == 2);

  // A row exactly at the threshold survives (strict comparison).
  Eigen::MatrixXd tie(2, 1);
  tie << 10.0, 1.0;
  const WeightSnapshot tsnap =
      two_layer_snapshot(tie, Eigen::VectorXd::Zero(2),
                         Eigen::MatrixXd::Ones(2, 2));
  CHECK(filter_vanishing(tsnap, "hidden", 0.1).empty());

  // An all-zero layer reports every neuron.
  const WeightSnapshot zsnap =
      two_layer_snapshot(Eigen::MatrixXd::Zero(4, 2),
                         Eigen::VectorXd::Zero(4), Eigen::MatrixXd::Ones(1, 4));
  CHECK(filter_vanishing(zsnap, "hidden", 0.1).size() == 4);

  CHECK_THROWS_AS(filter_vanishing(snap, "hidden", 0.0), ConfigError);
  CHECK_THROWS_AS(filter_vanishing(snap, "hidden", 1.0), ConfigError);
}

TEST_CASE("clustering merges exactly the pairs within the threshold") {
  DistanceMatrix far;
  far.entries = Eigen::MatrixXd::Constant(4, 4, 3.0);
  far.entries.diagonal().setZero();
  const ClusterReport all_far = cluster_independent(far, 0.1);
  CHECK(all_far.n_independent == 4);
  CHECK(all_far.labels == std::vector<int>{0, 1, 2, 3});

  DistanceMatrix same;
  same.entries = Eigen::MatrixXd::Zero(4, 4);
  const ClusterReport all_same = cluster_independent(same, 0.1);
  CHECK(all_same.n_independent == 1);
  CHECK(all_same.labels == std::vector<int>{0, 0, 0, 0});
}

TEST_CASE("cluster ids follow the lowest member of each cluster") {
  // Clusters {0, 3} and {1, 2}: neuron 0's cluster takes id 0.
  DistanceMatrix m;
  m.entries = Eigen::MatrixXd::Constant(4, 4, 2.0);
  m.entries.diagonal().setZero();
  m.entries(0, 3) = m.entries(3, 0) = 0.01;
  m.entries(1, 2) = m.entries(2, 1) = 0.02;
  const ClusterReport r = cluster_independent(m, 0.1);
  CHECK(r.n_independent == 2);
  CHECK(r.labels == std::vector<int>{0, 1, 1, 0});
}

TEST_CASE("linkage rules differ on a chain of near neighbors") {
  // d(0,1) = d(1,2) = 0.05 but d(0,2) = 0.5: single linkage chains all
  // three together, complete and average linkage keep neuron 2 apart.
  DistanceMatrix m;
  m.entries = Eigen::MatrixXd::Zero(3, 3);
  m.entries(0, 1) = m.entries(1, 0) = 0.05;
  m.entries(1, 2) = m.entries(2, 1) = 0.05;
  m.entries(0, 2) = m.entries(2, 0) = 0.5;

  CHECK(cluster_independent(m, 0.1, Linkage::single).n_independent == 1);
  CHECK(cluster_independent(m, 0.1, Linkage::complete).n_independent == 2);
  CHECK(cluster_independent(m, 0.1, Linkage::average).n_independent == 2);

  // Complete linkage certifies every intra-cluster pair stays within the
  // threshold, which the chain above would violate.
  const ClusterReport r = cluster_independent(m, 0.1, Linkage::complete);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (r.labels[static_cast<std::size_t>(i)] ==
              r.labels[static_cast<std::size_t>(j)] &&
          i != j)
        CHECK(m.entries(i, j) <= 0.1);
}

TEST_CASE("linkage and basis names round-trip") {
  for (Linkage l : {Linkage::complete, Linkage::single, Linkage::average})
    CHECK(linkage_from_name(to_string(l)) == l);
  for (DistanceBasis b : {DistanceBasis::incoming, DistanceBasis::outgoing,
                          DistanceBasis::concat})
    CHECK(distance_basis_from_name(to_string(b)) == b);
  CHECK_THROWS_AS(linkage_from_name("ward"), ConfigError);
  CHECK_THROWS_AS(distance_basis_from_name("both"), ConfigError);
}

TEST_CASE("layer analysis counts planted groups and dead neurons") {
  const Eigen::Index width = 64;
  const WeightSnapshot snap = planted_snapshot(width, 10, 5, 1234);
  AnalyzeOptions opts;
  const LayerAnalysis a = analyze_layer(snap, "hidden", opts);

  CHECK(a.clusters.n_total == width);
  CHECK(a.clusters.n_vanishing == 5);
  REQUIRE(a.vanishing.size() == 5);
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(a.vanishing[i] == static_cast<Eigen::Index>(width - 5 + i));
  CHECK(a.kept.size() == 59);
  CHECK(a.concat_distances.n() == 59);
  CHECK(a.clusters.n_independent == 10);
  CHECK(a.clusters.fraction_independent ==
        doctest::Approx(10.0 / 64.0).epsilon(1e-15));
  CHECK(a.clusters.labels.size() == 59);

  // Exact duplicates land in the same cluster: members i and i + 10 share a
  // group by construction.
  for (std::size_t i = 0; i + 10 < a.clusters.labels.size(); ++i)
    CHECK(a.clusters.labels[i] == a.clusters.labels[i + 10]);
}

TEST_CASE("effective rank of pinned spectra") {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(2, 2);
  d(0, 0) = 3.0;
  d(1, 1) = 1.0;
  const EffRankReport r = effective_rank(d);
  REQUIRE(r.singulars.size() == 2);
  CHECK(r.singulars[0] == doctest::Approx(3.0));
  CHECK(r.rho == doctest::Approx(0.5623351446188083).epsilon(1e-12));

  // Scale invariance: the normalized spectrum ignores a global factor.
  CHECK(effective_rank(5.0 * d).rho == doctest::Approx(r.rho).epsilon(1e-12));

  // A rank-one matrix has zero spectral entropy.
  Eigen::MatrixXd rank1 = vec({1.0, 2.0, -1.0}) * vec({0.5, 1.5}).transpose();
  CHECK(effective_rank(rank1).rho == doctest::Approx(0.0).epsilon(1e-12));

  // Sixteen equal singular values saturate at ln 16.
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(16, 16);
  CHECK(effective_rank(eye).rho ==
        doctest::Approx(std::log(16.0)).epsilon(1e-12));

  CHECK_THROWS_AS(effective_rank(Eigen::MatrixXd::Zero(3, 3)), ConfigError);
}

TEST_CASE("heatmap order groups planted duplicates contiguously") {
  const WeightSnapshot snap = planted_snapshot(12, 3, 0, 77);
  PairwiseOptions opts;
  opts.which = DistanceBasis::incoming;
  const DistanceMatrix inc = pairwise_matrix(snap, "hidden", opts);

  const HeatmapOrder h = heatmap_order(inc, 3);
  REQUIRE(h.order.size() == 12);
  REQUIRE(h.labels.size() == 12);

  // The order is a permutation.
  std::set<Eigen::Index> seen(h.order.begin(), h.order.end());
  CHECK(seen.size() == 12);

  // Neurons i, i+3, i+6, i+9 share a group; each group's members must form
  // one contiguous run of the leaf order.
  std::vector<int> group_of(12);
  for (int i = 0; i < 12; ++i) group_of[static_cast<std::size_t>(i)] = i % 3;
  for (std::size_t pos = 0; pos + 1 < h.order.size(); ++pos) {
    const int g = group_of[static_cast<std::size_t>(h.order[pos])];
    const int gn = group_of[static_cast<std::size_t>(h.order[pos + 1])];
    if (g == gn) continue;
    // A group never reappears after it has been left.
    for (std::size_t later = pos + 1; later < h.order.size(); ++later)
      CHECK(group_of[static_cast<std::size_t>(h.order[later])] != g);
  }

  // Cut labels agree with direct clustering at any threshold that separates
  // the groups (duplicates are exact, between-group distances are not 0).
  const ClusterReport direct = cluster_independent(inc, 1e-9);
  CHECK(direct.n_independent == 3);
  for (int i = 0; i < 12; ++i)
    CHECK(h.labels[static_cast<std::size_t>(i)] ==
          direct.labels[static_cast<std::size_t>(i)]);

  // Reordering both views with the same permutation keeps them aligned and
  // makes cluster blocks contiguous in the incoming view.
  const DistanceMatrix ordered = apply_order(inc, h.order);
  for (Eigen::Index i = 0; i < 12; ++i)
    for (Eigen::Index j = 0; j < 12; ++j)
      CHECK(ordered.entries(i, j) ==
            inc.entries(h.order[static_cast<std::size_t>(i)],
                        h.order[static_cast<std::size_t>(j)]));

  opts.which = DistanceBasis::outgoing;
  const DistanceMatrix outg = pairwise_matrix(snap, "hidden", opts);
  const DistanceMatrix outg_ordered = apply_order(outg, h.order);
  for (Eigen::Index i = 0; i < 12; ++i)
    CHECK(outg_ordered.entries(i, i) == 0.0);
}

TEST_CASE("heatmap order handles the extreme cuts") {
  const WeightSnapshot snap = planted_snapshot(8, 2, 0, 5);
  PairwiseOptions opts;
  opts.which = DistanceBasis::incoming;
  const DistanceMatrix inc = pairwise_matrix(snap, "hidden", opts);

  const HeatmapOrder one = heatmap_order(inc, 1);
  for (int l : one.labels) CHECK(l == 0);
  const HeatmapOrder all = heatmap_order(inc, 8);
  std::set<int> distinct(all.labels.begin(), all.labels.end());
  CHECK(distinct.size() == 8);
  CHECK_THROWS_AS(heatmap_order(inc, 0), ConfigError);
  CHECK_THROWS_AS(heatmap_order(inc, 9), ConfigError);
}

TEST_CASE("apply_order rejects non-permutations") {
  DistanceMatrix m;
  m.entries = Eigen::MatrixXd::Zero(3, 3);
  CHECK_THROWS_AS(apply_order(m, {0, 1}), ConfigError);
  CHECK_THROWS_AS(apply_order(m, {0, 1, 1}), ConfigError);
  CHECK_THROWS_AS(apply_order(m, {0, 1, 3}), ConfigError);
  CHECK_NOTHROW(apply_order(m, {2, 0, 1}));
}
