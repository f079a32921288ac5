#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace collapse {

inline constexpr std::int64_t kSnapshotFormatVersion = 1;

// One layer of a dense network as the detector sees it. The incoming matrix
// of layer l+1 doubles as the outgoing matrix of layer l; it is stored once
// and viewed twice, which keeps the two views consistent by construction.
struct SnapshotLayer {
  std::string name;
  std::int64_t in_dim = 0;
  std::int64_t out_dim = 0;
  Eigen::MatrixXd incoming;  // out_dim x in_dim
  Eigen::VectorXd bias;      // out_dim
  std::optional<std::string> residual_from;
};

struct WeightSnapshot {
  std::vector<SnapshotLayer> layers;

  const SnapshotLayer* find(const std::string& name) const;
  // Index of a layer by name; throws ConfigError when absent.
  std::size_t index_of(const std::string& name) const;
};

// JSON document {format_version, layers: [...]} with incoming matrices
// flattened row-major. Layers whose incoming matrix has at least
// raw_sidecar_threshold entries are written to `path`.bin as raw
// little-endian 64-bit floats and referenced by byte offset and count.
void write_snapshot(const WeightSnapshot& snapshot,
                    const std::filesystem::path& path,
                    std::size_t raw_sidecar_threshold = SIZE_MAX);

WeightSnapshot read_snapshot(const std::filesystem::path& path);

}  // namespace collapse
