#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rpr/geometry.hpp"
#include "rpr/retrieval.hpp"
#include "rpr/rif.hpp"

namespace rpr {

// All multi-byte integers and floats on disk are little-endian.

/// Row-major N x 3 float64 coordinates; N = file length / 24.
PointCloud<double> read_bin_cloud(const std::filesystem::path& path);
void write_bin_cloud(const std::filesystem::path& path, const PointCloud<double>& cloud);

struct ManifestEntry {
  std::string path;  // as written; relative paths resolve against the manifest's directory
  double northing = 0.0;
  double easting = 0.0;
};

struct DatasetManifest {
  std::string split;  // "train" or "test"
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const ManifestEntry& e) const;
};

/// Comma-separated `file,northing,easting` with one header line. The split
/// tag is read from a `# split=<tag>` comment line when present.
DatasetManifest read_manifest(const std::filesystem::path& path, bool check_paths = true);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// "RPRDB1", m and l as int64, m*l float32 descriptors, m*2 float64 positions.
void write_database(const std::filesystem::path& path, const PlaceDatabase& db);
PlaceDatabase read_database(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_database(const PlaceDatabase& db);
PlaceDatabase decode_database(const std::vector<std::uint8_t>& bytes);

/// Shape header (N_s, K, 11) as int64 followed by float64 values.
void write_rif_dump(const std::filesystem::path& path, const RifTensor<double>& rifs);
RifTensor<double> read_rif_dump(const std::filesystem::path& path);

struct TensorBlob {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> values;

  bool operator==(const TensorBlob&) const = default;
};

/// Model parameters, optimizer state and the config that built the model.
struct Checkpoint {
  static constexpr std::uint64_t kVersion = 1;

  std::uint64_t version = kVersion;
  std::string config_text;  // key=value lines
  std::int64_t epoch = 0;
  std::vector<TensorBlob> parameters;
  std::int64_t optimizer_step = 0;
  std::vector<TensorBlob> optimizer_m;
  std::vector<TensorBlob> optimizer_v;
  std::int64_t batch_size = 0;

  bool operator==(const Checkpoint&) const = default;
};

/// Layout: "RPRCK1", version, config (len + bytes), epoch, batch size,
/// parameter count, blobs, optimizer step, moment blobs (m then v).
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace rpr
