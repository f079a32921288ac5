#include "collapse/snapshot_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "collapse/errors.hpp"
#include "json.hpp"

namespace collapse {

namespace {

using nlohmann::json;

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw IoError("snapshot: unknown field '" + it.key() + "' in " + where);
  }
}

std::uint64_t to_le_bits(double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  if constexpr (std::endian::native == std::endian::big)
    bits = __builtin_bswap64(bits);
  return bits;
}

double from_le_bits(std::uint64_t bits) {
  if constexpr (std::endian::native == std::endian::big)
    bits = __builtin_bswap64(bits);
  return std::bit_cast<double>(bits);
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p += ".bin";
  return p;
}

}  // namespace

const SnapshotLayer* WeightSnapshot::find(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return &l;
  return nullptr;
}

std::size_t WeightSnapshot::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].name == name) return i;
  throw ConfigError("snapshot: no layer named '" + name + "'");
}

void write_snapshot(const WeightSnapshot& snapshot,
                    const std::filesystem::path& path,
                    std::size_t raw_sidecar_threshold) {
  json doc;
  doc["format_version"] = kSnapshotFormatVersion;
  json layers = json::array();

  std::vector<std::uint64_t> raw;  // little-endian payload for large layers
  for (const auto& l : snapshot.layers) {
    if (l.incoming.rows() != l.out_dim || l.incoming.cols() != l.in_dim)
      throw ConfigError("snapshot: incoming shape mismatch in '" + l.name +
                        "'");
    if (l.bias.size() != l.out_dim)
      throw ConfigError("snapshot: bias length mismatch in '" + l.name + "'");

    json jl;
    jl["name"] = l.name;
    jl["in_dim"] = l.in_dim;
    jl["out_dim"] = l.out_dim;
    const auto n_entries = static_cast<std::size_t>(l.incoming.size());
    if (n_entries >= raw_sidecar_threshold) {
      json ref;
      ref["offset"] = raw.size() * sizeof(std::uint64_t);
      ref["count"] = n_entries;
      jl["incoming_raw"] = ref;
      for (Eigen::Index r = 0; r < l.incoming.rows(); ++r)
        for (Eigen::Index c = 0; c < l.incoming.cols(); ++c)
          raw.push_back(to_le_bits(l.incoming(r, c)));
    } else {
      json arr = json::array();
      for (Eigen::Index r = 0; r < l.incoming.rows(); ++r)
        for (Eigen::Index c = 0; c < l.incoming.cols(); ++c)
          arr.push_back(l.incoming(r, c));
      jl["incoming"] = arr;
    }
    json barr = json::array();
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) barr.push_back(l.bias(i));
    jl["bias"] = barr;
    if (l.residual_from) jl["residual_from"] = *l.residual_from;
    layers.push_back(std::move(jl));
  }
  doc["layers"] = std::move(layers);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("snapshot: cannot open " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("snapshot: write failure on " + path.string());

  if (!raw.empty()) {
    std::ofstream bin(sidecar_path(path), std::ios::binary);
    if (!bin)
      throw IoError("snapshot: cannot open " + sidecar_path(path).string());
    bin.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size() * sizeof(std::uint64_t)));
    if (!bin)
      throw IoError("snapshot: write failure on " +
                    sidecar_path(path).string());
  }
}

WeightSnapshot read_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("snapshot: cannot open " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw IoError("snapshot: parse error in " + path.string() + ": " +
                  e.what());
  }

  check_keys(doc, {"format_version", "layers"}, "document root");
  if (!doc.contains("format_version") ||
      doc["format_version"].get<std::int64_t>() != kSnapshotFormatVersion)
    throw IoError("snapshot: unsupported or missing format_version");
  if (!doc.contains("layers") || !doc["layers"].is_array())
    throw IoError("snapshot: missing layers array");

  // The sidecar is opened lazily: snapshots without raw references do not
  // need it to exist.
  std::ifstream bin;
  auto read_raw = [&](std::size_t offset, std::size_t count) {
    if (!bin.is_open()) {
      bin.open(sidecar_path(path), std::ios::binary);
      if (!bin)
        throw IoError("snapshot: missing sidecar " +
                      sidecar_path(path).string());
    }
    std::vector<std::uint64_t> bits(count);
    bin.seekg(static_cast<std::streamoff>(offset));
    bin.read(reinterpret_cast<char*>(bits.data()),
             static_cast<std::streamsize>(count * sizeof(std::uint64_t)));
    if (!bin)
      throw IoError("snapshot: sidecar read failure at offset " +
                    std::to_string(offset));
    return bits;
  };

  WeightSnapshot snap;
  for (const auto& jl : doc["layers"]) {
    check_keys(jl,
               {"name", "in_dim", "out_dim", "incoming", "incoming_raw",
                "bias", "residual_from"},
               "layer record");
    SnapshotLayer l;
    l.name = jl.at("name").get<std::string>();
    l.in_dim = jl.at("in_dim").get<std::int64_t>();
    l.out_dim = jl.at("out_dim").get<std::int64_t>();
    if (l.in_dim < 1 || l.out_dim < 1)
      throw IoError("snapshot: non-positive dims in '" + l.name + "'");

    const auto want =
        static_cast<std::size_t>(l.in_dim) * static_cast<std::size_t>(l.out_dim);
    l.incoming.resize(l.out_dim, l.in_dim);
    if (jl.contains("incoming_raw")) {
      const auto& ref = jl["incoming_raw"];
      check_keys(ref, {"offset", "count"}, "incoming_raw reference");
      if (ref.at("count").get<std::size_t>() != want)
        throw IoError("snapshot: raw count mismatch in '" + l.name + "'");
      const auto bits = read_raw(ref.at("offset").get<std::size_t>(), want);
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < l.incoming.rows(); ++r)
        for (Eigen::Index c = 0; c < l.incoming.cols(); ++c)
          l.incoming(r, c) = from_le_bits(bits[k++]);
    } else if (jl.contains("incoming")) {
      const auto& arr = jl["incoming"];
      if (arr.size() != want)
        throw IoError("snapshot: incoming length mismatch in '" + l.name +
                      "'");
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < l.incoming.rows(); ++r)
        for (Eigen::Index c = 0; c < l.incoming.cols(); ++c)
          l.incoming(r, c) = arr[k++].get<double>();
    } else {
      throw IoError("snapshot: layer '" + l.name + "' has no weight payload");
    }

    const auto& barr = jl.at("bias");
    if (barr.size() != static_cast<std::size_t>(l.out_dim))
      throw IoError("snapshot: bias length mismatch in '" + l.name + "'");
    l.bias.resize(l.out_dim);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i)
      l.bias(i) = barr[static_cast<std::size_t>(i)].get<double>();

    if (jl.contains("residual_from"))
      l.residual_from = jl["residual_from"].get<std::string>();
    snap.layers.push_back(std::move(l));
  }

  // Residual references must point at an earlier layer of matching width.
  for (std::size_t i = 0; i < snap.layers.size(); ++i) {
    const auto& l = snap.layers[i];
    if (!l.residual_from) continue;
    if (snap.find(*l.residual_from) == nullptr)
      throw IoError("snapshot: residual_from references unknown layer '" +
                    *l.residual_from + "'");
    const std::size_t j = snap.index_of(*l.residual_from);
    if (j >= i)
      throw IoError("snapshot: residual_from must reference an earlier layer");
    if (snap.layers[j].out_dim != l.out_dim)
      throw IoError("snapshot: residual width mismatch between '" + l.name +
                    "' and '" + *l.residual_from + "'");
  }
  return snap;
}

}  // namespace collapse
