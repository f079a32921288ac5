#include "collapse/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include <Eigen/Dense>

#include "collapse/errors.hpp"

namespace collapse {

const char* to_string(DistanceBasis which) {
  switch (which) {
    case DistanceBasis::incoming:
      return "incoming";
    case DistanceBasis::outgoing:
      return "outgoing";
    case DistanceBasis::concat:
      return "concat";
  }
  return "?";
}

const char* to_string(Linkage linkage) {
  switch (linkage) {
    case Linkage::complete:
      return "complete";
    case Linkage::single:
      return "single";
    case Linkage::average:
      return "average";
  }
  return "?";
}

DistanceBasis distance_basis_from_name(std::string_view name) {
  if (name == "incoming") return DistanceBasis::incoming;
  if (name == "outgoing") return DistanceBasis::outgoing;
  if (name == "concat") return DistanceBasis::concat;
  throw ConfigError("unknown distance basis '" + std::string(name) +
                    "'; expected incoming, outgoing or concat");
}

Linkage linkage_from_name(std::string_view name) {
  if (name == "complete") return Linkage::complete;
  if (name == "single") return Linkage::single;
  if (name == "average") return Linkage::average;
  throw ConfigError("unknown linkage '" + std::string(name) +
                    "'; expected complete, single or average");
}

double normalized_distance(const Eigen::VectorXd& wi,
                           const Eigen::VectorXd& wj) {
  if (wi.size() != wj.size())
    throw ConfigError("normalized distance needs vectors of equal length");
  const double scale = wi.squaredNorm() + wj.squaredNorm();
  if (scale == 0.0) return 0.0;
  return 2.0 * (wi - wj).squaredNorm() / scale;
}

namespace {

// Per-neuron feature vector for a layer. The outgoing weights of layer k
// live in layer k+1's incoming matrix (column p).
Eigen::VectorXd neuron_feature(const WeightSnapshot& snapshot,
                               std::size_t layer_idx, Eigen::Index p,
                               DistanceBasis which, bool include_bias) {
  const SnapshotLayer& layer = snapshot.layers[layer_idx];
  const bool needs_outgoing = which != DistanceBasis::incoming;
  if (needs_outgoing && layer_idx + 1 == snapshot.layers.size())
    throw ConfigError("layer '" + layer.name +
                      "' has no outgoing weights; only incoming distances "
                      "are defined for the final layer");

  std::vector<double> parts;
  const auto push_triple = [&](std::size_t li) {
    const SnapshotLayer& src = snapshot.layers[li];
    if (which != DistanceBasis::outgoing) {
      for (Eigen::Index j = 0; j < src.incoming.cols(); ++j)
        parts.push_back(src.incoming(p, j));
      if (include_bias) parts.push_back(src.bias(p));
    }
    if (which != DistanceBasis::incoming) {
      const Eigen::MatrixXd& next = snapshot.layers[li + 1].incoming;
      for (Eigen::Index i = 0; i < next.rows(); ++i)
        parts.push_back(next(i, p));
    }
  };

  push_triple(layer_idx);
  // A skip connection carries this neuron's output directly into the target
  // layer, so its twin triple there belongs to the same comparison.
  if (which == DistanceBasis::concat && layer.residual_from)
    push_triple(snapshot.index_of(*layer.residual_from));

  return Eigen::Map<const Eigen::VectorXd>(
      parts.data(), static_cast<Eigen::Index>(parts.size()));
}

DistanceMatrix pairwise_impl(const WeightSnapshot& snapshot,
                             const std::string& layer,
                             const PairwiseOptions& options, bool parallel) {
  const std::size_t li = snapshot.index_of(layer);
  const Eigen::Index n = snapshot.layers[li].out_dim;

  std::vector<Eigen::VectorXd> features;
  features.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index p = 0; p < n; ++p)
    features.push_back(
        neuron_feature(snapshot, li, p, options.which, options.include_bias));

  DistanceMatrix out;
  out.which = options.which;
  out.entries = Eigen::MatrixXd::Zero(n, n);
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      out.entries(i, j) = normalized_distance(
          features[static_cast<std::size_t>(i)],
          features[static_cast<std::size_t>(j)]);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      out.entries(j, i) = out.entries(i, j);
  return out;
}

}  // namespace

DistanceMatrix pairwise_matrix(const WeightSnapshot& snapshot,
                               const std::string& layer,
                               const PairwiseOptions& options) {
  return pairwise_impl(snapshot, layer, options, true);
}

DistanceMatrix pairwise_matrix_serial(const WeightSnapshot& snapshot,
                                      const std::string& layer,
                                      const PairwiseOptions& options) {
  return pairwise_impl(snapshot, layer, options, false);
}

std::vector<Eigen::Index> filter_vanishing(const WeightSnapshot& snapshot,
                                           const std::string& layer,
                                           double frac) {
  if (!(frac > 0.0 && frac < 1.0))
    throw ConfigError("vanishing fraction must lie strictly between 0 and 1");
  const SnapshotLayer& l = snapshot.layers[snapshot.index_of(layer)];
  const Eigen::VectorXd norms = l.incoming.rowwise().norm();
  const double max_norm = norms.maxCoeff();
  std::vector<Eigen::Index> vanishing;
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    // Strict comparison, so ties with the cutoff survive; a layer whose
    // rows are all zero has nothing left to keep.
    if (norms(i) < frac * max_norm || max_norm == 0.0) vanishing.push_back(i);
  }
  return vanishing;
}

namespace {

// Bottom-up merging over a precomputed distance matrix. Keeps, per active
// cluster, its leaves in dendrogram order and its lowest member for
// deterministic tie-breaking. Linkage distances are updated with the
// Lance-Williams recurrences.
class Agglomerator {
 public:
  explicit Agglomerator(const Eigen::MatrixXd& distances, Linkage linkage)
      : linkage_(linkage), dist_(distances) {
    const Eigen::Index n = distances.rows();
    clusters_.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      clusters_.push_back({{i}, i, true});
    n_active_ = static_cast<std::size_t>(n);
  }

  std::size_t n_active() const { return n_active_; }

  // Performs the best merge if its linkage distance is at most `limit`.
  bool merge_next(double limit) {
    if (n_active_ < 2) return false;
    const std::size_t n = clusters_.size();
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    Eigen::Index blo = 0, bhi = 0;
    bool found = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!clusters_[i].active) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!clusters_[j].active) continue;
        const double d = dist_(static_cast<Eigen::Index>(i),
                               static_cast<Eigen::Index>(j));
        const Eigen::Index lo =
            std::min(clusters_[i].lowest, clusters_[j].lowest);
        const Eigen::Index hi =
            std::max(clusters_[i].lowest, clusters_[j].lowest);
        if (!found || d < best ||
            (d == best && (lo < blo || (lo == blo && hi < bhi)))) {
          best = d;
          bi = i;
          bj = j;
          blo = lo;
          bhi = hi;
          found = true;
        }
      }
    }
    if (!found || best > limit) return false;

    // Survivor is the cluster holding the lower member index; its leaves
    // come first in the merged dendrogram order.
    std::size_t keep = bi, drop = bj;
    if (clusters_[drop].lowest < clusters_[keep].lowest)
      std::swap(keep, drop);
    auto& kc = clusters_[keep];
    auto& dc = clusters_[drop];
    const double size_k = static_cast<double>(kc.leaves.size());
    const double size_d = static_cast<double>(dc.leaves.size());
    for (std::size_t other = 0; other < n; ++other) {
      if (!clusters_[other].active || other == keep || other == drop)
        continue;
      const auto o = static_cast<Eigen::Index>(other);
      const auto k = static_cast<Eigen::Index>(keep);
      const auto d = static_cast<Eigen::Index>(drop);
      double merged = 0.0;
      switch (linkage_) {
        case Linkage::complete:
          merged = std::max(dist_(k, o), dist_(d, o));
          break;
        case Linkage::single:
          merged = std::min(dist_(k, o), dist_(d, o));
          break;
        case Linkage::average:
          merged = (size_k * dist_(k, o) + size_d * dist_(d, o)) /
                   (size_k + size_d);
          break;
      }
      dist_(k, o) = merged;
      dist_(o, k) = merged;
    }
    kc.leaves.insert(kc.leaves.end(), dc.leaves.begin(), dc.leaves.end());
    kc.lowest = std::min(kc.lowest, dc.lowest);
    dc.active = false;
    dc.leaves.clear();
    --n_active_;
    return true;
  }

  // Cluster ids in lowest-member order, indexed by original neuron.
  std::vector<int> labels() const {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < clusters_.size(); ++i)
      if (clusters_[i].active) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return clusters_[a].lowest < clusters_[b].lowest;
    });
    std::size_t n_leaves = 0;
    for (std::size_t i : order) n_leaves += clusters_[i].leaves.size();
    std::vector<int> out(n_leaves, -1);
    for (std::size_t rank = 0; rank < order.size(); ++rank)
      for (Eigen::Index leaf : clusters_[order[rank]].leaves)
        out[static_cast<std::size_t>(leaf)] = static_cast<int>(rank);
    return out;
  }

  std::vector<Eigen::Index> leaf_order() const {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < clusters_.size(); ++i)
      if (clusters_[i].active) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return clusters_[a].lowest < clusters_[b].lowest;
    });
    std::vector<Eigen::Index> leaves;
    for (std::size_t i : order)
      leaves.insert(leaves.end(), clusters_[i].leaves.begin(),
                    clusters_[i].leaves.end());
    return leaves;
  }

 private:
  struct Cluster {
    std::vector<Eigen::Index> leaves;  // dendrogram order
    Eigen::Index lowest;
    bool active;
  };

  Linkage linkage_;
  Eigen::MatrixXd dist_;
  std::vector<Cluster> clusters_;
  std::size_t n_active_ = 0;
};

void check_distance_matrix(const DistanceMatrix& matrix) {
  if (matrix.entries.rows() != matrix.entries.cols())
    throw ConfigError("distance matrix must be square");
}

}  // namespace

ClusterReport cluster_independent(const DistanceMatrix& matrix,
                                  double threshold, Linkage linkage) {
  check_distance_matrix(matrix);
  if (threshold < 0.0) throw ConfigError("threshold must be nonnegative");
  ClusterReport report;
  report.n_total = matrix.n();
  if (matrix.n() == 0) return report;

  Agglomerator agg(matrix.entries, linkage);
  while (agg.merge_next(threshold)) {
  }
  report.labels = agg.labels();
  report.n_independent = static_cast<Eigen::Index>(agg.n_active());
  report.fraction_independent = static_cast<double>(report.n_independent) /
                                static_cast<double>(report.n_total);
  return report;
}

LayerAnalysis analyze_layer(const WeightSnapshot& snapshot,
                            const std::string& layer,
                            const AnalyzeOptions& options) {
  LayerAnalysis out;
  out.layer = layer;
  out.vanishing = filter_vanishing(snapshot, layer, options.vanishing_frac);

  const std::size_t li = snapshot.index_of(layer);
  const Eigen::Index width = snapshot.layers[li].out_dim;
  std::vector<bool> gone(static_cast<std::size_t>(width), false);
  for (Eigen::Index i : out.vanishing) gone[static_cast<std::size_t>(i)] = true;
  for (Eigen::Index i = 0; i < width; ++i)
    if (!gone[static_cast<std::size_t>(i)]) out.kept.push_back(i);

  const auto n_kept = static_cast<Eigen::Index>(out.kept.size());
  std::vector<Eigen::VectorXd> features;
  features.reserve(out.kept.size());
  for (Eigen::Index p : out.kept)
    features.push_back(neuron_feature(snapshot, li, p, DistanceBasis::concat,
                                      options.include_bias));
  out.concat_distances.which = DistanceBasis::concat;
  out.concat_distances.entries = Eigen::MatrixXd::Zero(n_kept, n_kept);
  for (Eigen::Index i = 0; i < n_kept; ++i)
    for (Eigen::Index j = i + 1; j < n_kept; ++j) {
      const double d = normalized_distance(
          features[static_cast<std::size_t>(i)],
          features[static_cast<std::size_t>(j)]);
      out.concat_distances.entries(i, j) = d;
      out.concat_distances.entries(j, i) = d;
    }

  out.clusters = cluster_independent(out.concat_distances,
                                     options.cluster_threshold,
                                     options.linkage);
  out.clusters.n_total = width;
  out.clusters.n_vanishing = static_cast<Eigen::Index>(out.vanishing.size());
  out.clusters.fraction_independent =
      static_cast<double>(out.clusters.n_independent) /
      static_cast<double>(width);
  return out;
}

EffRankReport effective_rank(const Eigen::MatrixXd& matrix) {
  if (matrix.size() == 0 || matrix.cwiseAbs().maxCoeff() == 0.0)
    throw ConfigError("effective rank of a zero matrix is undefined");

  Eigen::VectorXd singulars;
  if (std::min(matrix.rows(), matrix.cols()) <= 128) {
    singulars = Eigen::JacobiSVD<Eigen::MatrixXd>(matrix).singularValues();
  } else {
    singulars = Eigen::BDCSVD<Eigen::MatrixXd>(matrix).singularValues();
  }

  EffRankReport report;
  const double total = singulars.sum();
  report.rho = 0.0;
  for (Eigen::Index i = 0; i < singulars.size(); ++i) {
    const double s = singulars(i);
    const double shat = s / total;
    report.singulars.push_back(s);
    report.normalized.push_back(shat);
    if (shat > 0.0) report.rho -= shat * std::log(shat);
  }
  return report;
}

HeatmapOrder heatmap_order(const DistanceMatrix& incoming,
                           Eigen::Index n_clusters, Linkage linkage) {
  check_distance_matrix(incoming);
  HeatmapOrder out;
  const Eigen::Index n = incoming.n();
  if (n == 0) return out;
  if (n_clusters < 1 || n_clusters > n)
    throw ConfigError("n_clusters must lie between 1 and the neuron count");

  Agglomerator agg(incoming.entries, linkage);
  const double no_limit = std::numeric_limits<double>::infinity();
  while (agg.n_active() > static_cast<std::size_t>(n_clusters))
    if (!agg.merge_next(no_limit)) break;
  out.labels = agg.labels();
  // Merging the rest of the way yields the full dendrogram's leaf order;
  // the clusters cut above stay contiguous because later merges only ever
  // concatenate whole blocks.
  while (agg.merge_next(no_limit)) {
  }
  out.order = agg.leaf_order();
  return out;
}

DistanceMatrix apply_order(const DistanceMatrix& matrix,
                           const std::vector<Eigen::Index>& order) {
  check_distance_matrix(matrix);
  const Eigen::Index n = matrix.n();
  if (static_cast<Eigen::Index>(order.size()) != n)
    throw ConfigError("order must list every neuron exactly once");
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (Eigen::Index i : order) {
    if (i < 0 || i >= n || seen[static_cast<std::size_t>(i)])
      throw ConfigError("order must be a permutation of the neuron indices");
    seen[static_cast<std::size_t>(i)] = true;
  }
  DistanceMatrix out;
  out.which = matrix.which;
  out.entries.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      out.entries(i, j) = matrix.entries(order[static_cast<std::size_t>(i)],
                                         order[static_cast<std::size_t>(j)]);
  return out;
}

}  // namespace collapse
