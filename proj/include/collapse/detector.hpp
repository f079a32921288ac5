#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "collapse/snapshot_io.hpp"

namespace collapse {

// Post-hoc collapse detection on trained weights: how many neurons of a
// layer still do independent work once near-duplicates are grouped and
// near-zero neurons are dropped.

enum class DistanceBasis { incoming, outgoing, concat };
enum class Linkage { complete, single, average };

const char* to_string(DistanceBasis which);
const char* to_string(Linkage linkage);
DistanceBasis distance_basis_from_name(std::string_view name);
Linkage linkage_from_name(std::string_view name);

// 2 ||wi - wj||^2 / (||wi||^2 + ||wj||^2), in [0, 4]; two zero vectors have
// distance 0 (both describe the same pruned neuron). Sensitive to scale and
// sign on purpose: dist(w, c w) = 2 (1-c)^2 / (1+c^2).
double normalized_distance(const Eigen::VectorXd& wi,
                           const Eigen::VectorXd& wj);

struct DistanceMatrix {
  DistanceBasis which = DistanceBasis::concat;
  Eigen::MatrixXd entries;  // symmetric, zero diagonal, entries in [0, 4]

  Eigen::Index n() const { return entries.rows(); }
};

struct PairwiseOptions {
  DistanceBasis which = DistanceBasis::concat;
  bool include_bias = true;  // b_p is part of the neuron triple by default
};

// Normalized distances between the layer's neurons. The concat vector per
// neuron is (incoming row, bias, outgoing column); when the layer has a
// skip connection the source layer's triple is appended as well, since the
// identity path ties the two neurons together. The outgoing column is the
// next layer's incoming matrix viewed column-wise, so asking for outgoing
// or concat distances of the final layer is an error.
DistanceMatrix pairwise_matrix(const WeightSnapshot& snapshot,
                               const std::string& layer,
                               const PairwiseOptions& options = {});
DistanceMatrix pairwise_matrix_serial(const WeightSnapshot& snapshot,
                                      const std::string& layer,
                                      const PairwiseOptions& options = {});

// Neuron i vanishes iff ||incoming row i|| < frac * max_j ||incoming row j||,
// strictly; ties survive. An all-zero layer reports every neuron.
std::vector<Eigen::Index> filter_vanishing(const WeightSnapshot& snapshot,
                                           const std::string& layer,
                                           double frac = 0.1);

struct ClusterReport {
  Eigen::Index n_total = 0;
  Eigen::Index n_vanishing = 0;
  std::vector<int> labels;  // cluster id per non-vanishing neuron
  Eigen::Index n_independent = 0;
  double fraction_independent = 0.0;
};

// Agglomerative clustering, merging while the smallest linkage distance is
// at most the threshold; ties broken towards the lowest member indices and
// cluster ids assigned in lowest-member order. Complete linkage (the
// default) certifies that every intra-cluster pair is within the threshold.
ClusterReport cluster_independent(const DistanceMatrix& matrix,
                                  double threshold = 0.1,
                                  Linkage linkage = Linkage::complete);

struct AnalyzeOptions {
  double vanishing_frac = 0.1;
  double cluster_threshold = 0.1;
  Linkage linkage = Linkage::complete;
  bool include_bias = true;
};

// The full pipeline for one layer: drop vanishing neurons, build concat
// distances over the survivors, cluster. fraction_independent is against
// the layer's total width.
struct LayerAnalysis {
  std::string layer;
  std::vector<Eigen::Index> vanishing;
  std::vector<Eigen::Index> kept;
  DistanceMatrix concat_distances;  // over kept neurons, in kept order
  ClusterReport clusters;
};

LayerAnalysis analyze_layer(const WeightSnapshot& snapshot,
                            const std::string& layer,
                            const AnalyzeOptions& options = {});

struct EffRankReport {
  std::vector<double> singulars;
  std::vector<double> normalized;  // s_i / sum_j s_j
  double rho = 0.0;                // -sum s^_i ln s^_i with 0 ln 0 = 0
};

// Shannon entropy of the normalized singular value distribution. A zero
// matrix has no spectrum to normalize and is rejected.
EffRankReport effective_rank(const Eigen::MatrixXd& matrix);

// Dendrogram leaf order from clustering the incoming-distance matrix all
// the way up; any cut's clusters occupy contiguous runs of the order, so
// reordering both the incoming and the outgoing matrix by it exposes the
// block structure. labels holds the cluster assignment at the n_clusters
// cut, in original neuron indexing.
struct HeatmapOrder {
  std::vector<Eigen::Index> order;
  std::vector<int> labels;
};

HeatmapOrder heatmap_order(const DistanceMatrix& incoming,
                           Eigen::Index n_clusters,
                           Linkage linkage = Linkage::complete);

DistanceMatrix apply_order(const DistanceMatrix& matrix,
                           const std::vector<Eigen::Index>& order);

}  // namespace collapse
