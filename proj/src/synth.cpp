#include "rpr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "rpr/io.hpp"
#include "rpr/rng.hpp"

namespace rpr {
namespace {

using Vec3d = Eigen::Vector3d;

/// Local frame of a primitive: yaw about z, then (planes) tilt about local x.
Eigen::Matrix3d primitive_frame(const Primitive& p) {
  return (Eigen::AngleAxisd(p.yaw, Vec3d::UnitZ()) * Eigen::AngleAxisd(p.tilt, Vec3d::UnitX())).toRotationMatrix();
}

/// Uniform point on the visible surface (ground face excluded) in local coordinates.
Vec3d sample_local(const Primitive& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), u01(0.0, 1.0);
  const Vec3d& e = p.half_extent;
  switch (p.kind) {
    case PrimitiveKind::kBox: {
      // Four sides and the top, area weighted.
      const double sx = 4.0 * e.y() * e.z(), sy = 4.0 * e.x() * e.z(), top = 4.0 * e.x() * e.y();
      const double pick = u01(rng) * (2.0 * sx + 2.0 * sy + top);
      if (pick < 2.0 * sx) return {pick < sx ? e.x() : -e.x(), u(rng) * e.y(), u(rng) * e.z()};
      if (pick < 2.0 * sx + 2.0 * sy) return {u(rng) * e.x(), pick < 2.0 * sx + sy ? e.y() : -e.y(), u(rng) * e.z()};
      return {u(rng) * e.x(), u(rng) * e.y(), e.z()};
    }
    case PrimitiveKind::kCylinder: {
      const double r = e.x(), hh = e.z();
      const double side = 2.0 * M_PI * r * 2.0 * hh, top = M_PI * r * r;
      const double theta = 2.0 * M_PI * u01(rng);
      if (u01(rng) * (side + top) < side) return {r * std::cos(theta), r * std::sin(theta), u(rng) * hh};
      const double rr = r * std::sqrt(u01(rng));
      return {rr * std::cos(theta), rr * std::sin(theta), hh};
    }
    case PrimitiveKind::kPlane:
      return {u(rng) * e.x(), 0.0, u(rng) * e.z()};
  }
  return Vec3d::Zero();
}

}  // namespace

void SynthConfig::validate() const {
  if (n_places < 2) throw InvalidArgument("synth: need at least 2 places");
  if (variants_per_place < 1 || points_per_cloud < 1) throw InvalidArgument("synth: counts must be positive");
  if (train_variants < 0 || train_variants > variants_per_place) throw InvalidArgument("synth: train_variants outside [0, variants]");
  if (!(spacing > 0.0) || !(scene_extent > 0.0)) throw InvalidArgument("synth: spacing and extent must be positive");
  if (!(occlusion_max >= 0.0 && occlusion_max < 1.0)) throw InvalidArgument("synth: occlusion_max must lie in [0, 1)");
}

double Primitive::area() const {
  const Vec3d& e = half_extent;
  switch (kind) {
    case PrimitiveKind::kBox: return 8.0 * e.y() * e.z() + 8.0 * e.x() * e.z() + 4.0 * e.x() * e.y();
    case PrimitiveKind::kCylinder: return 4.0 * M_PI * e.x() * e.z() + M_PI * e.x() * e.x();
    case PrimitiveKind::kPlane: return 4.0 * e.x() * e.z();
  }
  return 0.0;
}

std::vector<Primitive> synth_place_layout(const SynthConfig& cfg, Index place) {
  std::mt19937_64 rng(derive_seed(cfg.structure_seed, {0, static_cast<std::uint64_t>(place)}));
  std::uniform_int_distribution<int> count(5, 15), kind(0, 2);
  std::uniform_real_distribution<double> pos(-cfg.scene_extent, cfg.scene_extent), yaw(-M_PI, M_PI);
  auto range = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  std::vector<Primitive> out(static_cast<std::size_t>(count(rng)));
  for (auto& p : out) {
    p.kind = static_cast<PrimitiveKind>(kind(rng));
    p.yaw = yaw(rng);
    const double x = pos(rng), y = pos(rng);
    switch (p.kind) {
      case PrimitiveKind::kBox:
        p.half_extent = {range(1.0, 5.0), range(1.0, 5.0), range(1.0, 6.0)};
        break;
      case PrimitiveKind::kCylinder: {
        const double r = range(0.5, 3.0);
        p.half_extent = {r, r, range(1.0, 6.0)};
        break;
      }
      case PrimitiveKind::kPlane:
        p.half_extent = {range(2.0, 8.0), 0.0, range(0.5, 2.5)};
        p.tilt = range(-0.5, 0.5);
        break;
    }
    p.center = {x, y, p.half_extent.z() * std::cos(p.tilt)};
  }
  return out;
}

Eigen::Vector2d synth_place_position(const SynthConfig& cfg, Index place) {
  const auto cols = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(cfg.n_places))));
  return {cfg.spacing * static_cast<double>(place / cols), cfg.spacing * static_cast<double>(place % cols)};
}

PointCloud<double> synth_variant(const SynthConfig& cfg, const std::vector<Primitive>& layout, Index place, Index variant) {
  std::mt19937_64 rng(derive_seed(cfg.structure_seed, {1, static_cast<std::uint64_t>(place), static_cast<std::uint64_t>(variant)}));
  std::vector<double> cum;
  double total = 0.0;
  for (const auto& p : layout) cum.push_back(total += p.area());
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  const Index n = cfg.points_per_cloud;
  const auto oversample = static_cast<Index>(std::ceil(static_cast<double>(n) / (1.0 - cfg.occlusion_max))) + 16;
  PointCloud<double> raw(oversample, 3);
  for (Index i = 0; i < oversample; ++i) {
    const auto it = std::lower_bound(cum.begin(), cum.end(), u01(rng) * total);
    const Primitive& p = layout[static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cum.begin(), static_cast<std::ptrdiff_t>(layout.size()) - 1))];
    raw.row(i) = (primitive_frame(p) * sample_local(p, rng) + p.center).transpose();
  }

  // View crop: drop the points farthest along a random horizontal direction.
  const double phi = 2.0 * M_PI * u01(rng);
  const Vec3d dir(std::cos(phi), std::sin(phi), 0.0);
  const auto n_drop = static_cast<Index>(std::floor(u01(rng) * cfg.occlusion_max * static_cast<double>(oversample)));
  std::vector<std::pair<double, Index>> proj(static_cast<std::size_t>(oversample));
  for (Index i = 0; i < oversample; ++i) proj[static_cast<std::size_t>(i)] = {raw.row(i).dot(dir.transpose()), i};
  std::sort(proj.begin(), proj.end());
  std::vector<Index> kept;
  for (Index i = 0; i < oversample - n_drop; ++i) kept.push_back(proj[static_cast<std::size_t>(i)].second);
  std::shuffle(kept.begin(), kept.end(), rng);
  kept.resize(static_cast<std::size_t>(n));
  std::sort(kept.begin(), kept.end());

  std::normal_distribution<double> noise(0.0, cfg.jitter);
  PointCloud<double> cloud(n, 3);
  for (Index i = 0; i < n; ++i) {
    cloud.row(i) = raw.row(kept[static_cast<std::size_t>(i)]);
    if (cfg.jitter > 0.0) cloud.row(i) += Eigen::RowVector3d(noise(rng), noise(rng), noise(rng));
  }
  return normalize_cloud(cloud);
}

SynthDataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthDataset out;
  for (Index p = 0; p < cfg.n_places; ++p) {
    const auto layout = synth_place_layout(cfg, p);
    for (Index v = 0; v < cfg.variants_per_place; ++v) {
      SynthSample s;
      s.cloud = synth_variant(cfg, layout, p, v);
      s.position = synth_place_position(cfg, p);
      s.place = p;
      s.variant = v;
      (v < cfg.train_variants ? out.train : out.test).push_back(std::move(s));
    }
  }
  return out;
}

void write_synth_dataset(const std::filesystem::path& dir, const SynthDataset& data) {
  std::filesystem::create_directories(dir / "clouds");
  auto emit = [&](const std::vector<SynthSample>& samples, const std::string& split) {
    DatasetManifest m;
    m.split = split;
    for (const auto& s : samples) {
      const std::string rel = "clouds/p" + std::to_string(s.place) + "_v" + std::to_string(s.variant) + ".bin";
      write_bin_cloud(dir / rel, s.cloud);
      m.entries.push_back({rel, s.position.x(), s.position.y()});
    }
    write_manifest(dir / (split + ".csv"), m);
  };
  emit(data.train, "train");
  emit(data.test, "test");
}

}  // namespace rpr
