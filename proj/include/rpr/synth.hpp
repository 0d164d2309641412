#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rpr/geometry.hpp"

namespace rpr {

/// Desk-scale stand-in for a place-recognition benchmark: every place is a
/// random arrangement of boxes, cylinders and planar patches on a grid cell.
struct SynthConfig {
  Index n_places = 64;
  Index variants_per_place = 8;
  Index train_variants = 6;      // the first variants of each place go to the train split
  Index points_per_cloud = 1024;
  std::uint64_t structure_seed = 0;
  double spacing = 100.0;        // meters between neighboring places
  double scene_extent = 20.0;    // half-width of a place's scene, meters
  double occlusion_max = 0.05;   // max fraction removed by a variant's view crop
  double jitter = 0.05;          // meters, per-coordinate std of variant noise

  void validate() const;
};

enum class PrimitiveKind { kBox, kCylinder, kPlane };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kBox;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extent = Eigen::Vector3d::Ones();  // box: half sizes; cylinder: (r, r, h/2); plane: (w/2, 0, h/2)
  double yaw = 0.0;
  double tilt = 0.0;  // planes only, rotation about the local x axis

  double area() const;
};

struct SynthSample {
  PointCloud<double> cloud;  // normalized
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  Index place = 0;
  Index variant = 0;
};

struct SynthDataset {
  std::vector<SynthSample> train;
  std::vector<SynthSample> test;
};

/// 5-15 primitives of place `place`, deterministic in (seed, place).
std::vector<Primitive> synth_place_layout(const SynthConfig& cfg, Index place);

/// One surface-sampled, cropped, jittered and normalized view.
PointCloud<double> synth_variant(const SynthConfig& cfg, const std::vector<Primitive>& layout, Index place, Index variant);

Eigen::Vector2d synth_place_position(const SynthConfig& cfg, Index place);

SynthDataset synth_generate(const SynthConfig& cfg);

/// Writes `<dir>/clouds/p<place>_v<variant>.bin` plus train.csv and test.csv.
void write_synth_dataset(const std::filesystem::path& dir, const SynthDataset& data);

}  // namespace rpr
