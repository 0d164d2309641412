#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "rpr/ad/graph.hpp"
#include "rpr/ad/ops.hpp"
#include "rpr/ad/optimizer.hpp"
#include "rpr/geometry.hpp"
#include "rpr/network.hpp"
#include "rpr/rng.hpp"

namespace rpr {

struct TripletConfig {
  double margin = 0.2;
  double pos_radius = 10.0;  // meters
  double neg_radius = 50.0;  // meters

  void validate() const {
    if (!(margin > 0.0)) throw InvalidArgument("triplet margin must be positive");
    if (!(pos_radius > 0.0 && pos_radius < neg_radius)) throw InvalidArgument("need 0 < pos_radius < neg_radius");
  }
};

/// Dynamic batch sizing state, evaluated once per epoch.
struct BatchState {
  Index current_size = 16;
  Index max_size = 96;
  double expansion = 0.40;
  double active_ratio_threshold = 0.70;

  void validate() const {
    if (current_size < 1 || current_size > max_size) throw InvalidArgument("batch: need 1 <= current_size <= max_size");
    if (!(expansion >= 0.0)) throw InvalidArgument("batch: expansion must be non-negative");
  }
};

/// Grows the batch by the expansion rate (capped) when the active-triplet
/// count falls below the threshold fraction of the current batch size.
inline BatchState dynamic_batch_update(BatchState state, double active_triplets, Index total_triplets) {
  (void)total_triplets;
  const double ratio = active_triplets / static_cast<double>(state.current_size);
  if (ratio < state.active_ratio_threshold) {
    const auto grown = static_cast<Index>(std::lround(static_cast<double>(state.current_size) * (1.0 + state.expansion)));
    state.current_size = std::min(std::max(grown, state.current_size), state.max_size);
  }
  return state;
}

inline double triplet_loss(double d_pos, double d_neg, double margin) {
  return std::max(d_pos - d_neg + margin, 0.0);
}

struct Triplet {
  Index anchor = -1;
  Index positive = -1;
  Index negative = -1;

  bool operator==(const Triplet&) const = default;
};

/// Per anchor: the farthest positive (<= pos_radius) and nearest negative
/// (>= neg_radius) in descriptor space. Anchors lacking either are skipped;
/// ties resolve to the smallest index.
template <typename T>
std::vector<Triplet> batch_hard_mine(const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& descriptors,
                                     const std::vector<Eigen::Vector2d>& positions, const TripletConfig& cfg) {
  const Index b = descriptors.rows();
  if (static_cast<Index>(positions.size()) != b) throw InvalidArgument("mining: positions do not match descriptors");
  std::vector<Triplet> out;
  for (Index a = 0; a < b; ++a) {
    Triplet t{a, -1, -1};
    double best_pos = -1.0, best_neg = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < b; ++j) {
      if (j == a) continue;
      const double geo = (positions[static_cast<std::size_t>(j)] - positions[static_cast<std::size_t>(a)]).norm();
      const double d = static_cast<double>((descriptors.row(j) - descriptors.row(a)).norm());
      if (geo <= cfg.pos_radius) {
        if (d > best_pos) {
          best_pos = d;
          t.positive = j;
        }
      } else if (geo >= cfg.neg_radius) {
        if (d < best_neg) {
          best_neg = d;
          t.negative = j;
        }
      }
    }
    if (t.positive >= 0 && t.negative >= 0) out.push_back(t);
  }
  if (out.empty()) throw EmptyBatch("batch has no anchor with both a positive and a negative");
  return out;
}

inline constexpr double kDistanceFloor = 1e-12;

/// Mean triplet loss over `triplets`, as a graph node.
template <typename T>
ad::Var<T> triplet_batch_loss(const std::vector<ad::Var<T>>& descriptors, const std::vector<Triplet>& triplets, T margin) {
  if (triplets.empty()) throw EmptyBatch("no triplets");
  auto dist = [](ad::Var<T> a, ad::Var<T> b) {
    const ad::Var<T> d = ad::sub(a, b);
    return ad::sqrt(ad::clamp_min(ad::sum_all(ad::mul(d, d)), T(kDistanceFloor)));
  };
  std::vector<ad::Var<T>> terms;
  for (const Triplet& t : triplets) {
    const auto& fa = descriptors[static_cast<std::size_t>(t.anchor)];
    const ad::Var<T> diff = ad::sub(dist(fa, descriptors[static_cast<std::size_t>(t.positive)]),
                                    dist(fa, descriptors[static_cast<std::size_t>(t.negative)]));
    terms.push_back(ad::relu(ad::add_scalar(diff, margin)));
  }
  return ad::mean_all(ad::concat(terms, 0));
}

enum class RotationAugment { kOff, kZ, kSO3 };

struct AugmentConfig {
  double jitter_sigma = 0.001;
  double jitter_clip = 0.002;
  double translation_range = 0.01;
  double removal_fraction_max = 0.10;
  double erase_fraction_max = 0.10;
  RotationAugment rotation = RotationAugment::kOff;
  double rotation_max_angle = M_PI;  // z mode only

  void validate() const {
    auto frac = [](double f) { return f >= 0.0 && f <= 1.0; };
    if (!frac(removal_fraction_max) || !frac(erase_fraction_max)) throw InvalidArgument("augment: fractions must lie in [0, 1]");
    if (jitter_sigma < 0.0 || jitter_clip < 0.0 || translation_range < 0.0) throw InvalidArgument("augment: magnitudes must be non-negative");
  }
};

namespace detail {

/// Replaces rows flagged in `drop` by copies of random surviving rows.
template <typename T>
void repad_dropped(PointCloud<T>& cloud, const std::vector<char>& drop, std::mt19937_64& rng) {
  std::vector<Index> keep;
  for (Index i = 0; i < cloud.rows(); ++i)
    if (!drop[static_cast<std::size_t>(i)]) keep.push_back(i);
  if (keep.empty() || static_cast<Index>(keep.size()) == cloud.rows()) return;
  std::uniform_int_distribution<std::size_t> pick(0, keep.size() - 1);
  const PointCloud<T> src = cloud;
  for (Index i = 0; i < cloud.rows(); ++i)
    if (drop[static_cast<std::size_t>(i)]) cloud.row(i) = src.row(keep[pick(rng)]);
}

}  // namespace detail

/// Jitter, translation, random removal, cuboid erasing and optional rotation,
/// in that order. The point count is preserved by duplicating survivors.
template <typename T>
PointCloud<T> augment(const PointCloud<T>& cloud, const AugmentConfig& cfg, std::uint64_t rng_seed) {
  std::mt19937_64 rng(rng_seed);
  PointCloud<T> out = cloud;
  const Index n = out.rows();
  if (cfg.jitter_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.jitter_sigma);
    for (Index i = 0; i < out.size(); ++i)
      out.data()[i] += T(std::clamp(noise(rng), -cfg.jitter_clip, cfg.jitter_clip));
  }
  if (cfg.translation_range > 0.0) {
    std::uniform_real_distribution<double> u(-cfg.translation_range, cfg.translation_range);
    const Eigen::Matrix<T, 1, 3> shift(T(u(rng)), T(u(rng)), T(u(rng)));
    out.rowwise() += shift;
  }
  if (cfg.removal_fraction_max > 0.0 && n > 1) {
    std::uniform_real_distribution<double> u(0.0, cfg.removal_fraction_max);
    const auto count = static_cast<Index>(std::floor(u(rng) * static_cast<double>(n)));
    std::vector<Index> ids(static_cast<std::size_t>(n));
    std::iota(ids.begin(), ids.end(), Index{0});
    std::shuffle(ids.begin(), ids.end(), rng);
    std::vector<char> drop(static_cast<std::size_t>(n), 0);
    for (Index i = 0; i < std::min(count, n - 1); ++i) drop[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])] = 1;
    detail::repad_dropped(out, drop, rng);
  }
  if (cfg.erase_fraction_max > 0.0 && n > 1) {
    std::uniform_real_distribution<double> u(0.0, cfg.erase_fraction_max);
    const auto count = std::min(static_cast<Index>(std::floor(u(rng) * static_cast<double>(n))), n - 1);
    if (count > 0) {
      // Points nearest to a random center under a randomly scaled L-inf norm
      // fill an axis-aligned cuboid.
      std::uniform_int_distribution<Index> pick(0, n - 1);
      std::uniform_real_distribution<double> aspect(0.5, 2.0);
      const Eigen::Matrix<T, 1, 3> center = out.row(pick(rng));
      const Eigen::Matrix<T, 1, 3> inv_extent(T(1 / aspect(rng)), T(1 / aspect(rng)), T(1 / aspect(rng)));
      std::vector<std::pair<T, Index>> d(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i)
        d[static_cast<std::size_t>(i)] = {((out.row(i) - center).cwiseAbs().cwiseProduct(inv_extent)).maxCoeff(), i};
      std::partial_sort(d.begin(), d.begin() + count, d.end());
      std::vector<char> drop(static_cast<std::size_t>(n), 0);
      for (Index i = 0; i < count; ++i) drop[static_cast<std::size_t>(d[static_cast<std::size_t>(i)].second)] = 1;
      detail::repad_dropped(out, drop, rng);
    }
  }
  if (cfg.rotation != RotationAugment::kOff) {
    const RotationMode mode = cfg.rotation == RotationAugment::kSO3 ? RotationMode::so3() : RotationMode::z(cfg.rotation_max_angle);
    out = apply_rotation(out, random_rotation(rng(), mode));
  }
  return out;
}

template <typename T>
struct TrainingSample {
  PointCloud<T> cloud;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
};

struct TrainConfig {
  std::uint64_t seed = 0;
  TripletConfig triplet;
  AugmentConfig augment;
  BatchState batch;
  ad::RAdamConfig optimizer;
  double lr_decay = 1.0;  // multiplicative, per epoch
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;          // mean batch loss
  double active_ratio = 0.0;  // mean active triplets / batch size
  Index batch_size = 0;       // size used during this epoch
  Index batches = 0;
  Index triplets = 0;
  Index active_triplets = 0;
};

/// Orders one epoch as consecutive (anchor, positive) pairs so every batch
/// holds at least two samples of a place. Samples without any positive are
/// left out.
inline std::vector<Index> compose_epoch(const std::vector<Eigen::Vector2d>& positions, double pos_radius, std::uint64_t seed) {
  const Index n = static_cast<Index>(positions.size());
  std::mt19937_64 rng(seed);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  std::vector<Index> stream;
  for (Index a : order) {
    if (used[static_cast<std::size_t>(a)]) continue;
    std::vector<Index> free_pos;
    for (Index j : order)
      if (j != a && !used[static_cast<std::size_t>(j)] &&
          (positions[static_cast<std::size_t>(j)] - positions[static_cast<std::size_t>(a)]).norm() <= pos_radius)
        free_pos.push_back(j);
    if (free_pos.empty()) continue;
    const Index p = free_pos[std::uniform_int_distribution<std::size_t>(0, free_pos.size() - 1)(rng)];
    used[static_cast<std::size_t>(a)] = used[static_cast<std::size_t>(p)] = 1;
    stream.push_back(a);
    stream.push_back(p);
  }
  return stream;
}

/// Runs RprNet::calibrate on `count` samples spread evenly over `data`.
template <typename T>
void calibrate_on(RprNet<T>& net, const std::vector<TrainingSample<T>>& data, std::size_t count = 16) {
  if (data.empty()) throw InvalidArgument("calibrate_on: no samples");
  const std::size_t n = std::min(count, data.size());
  std::vector<PreparedCloud<T>> prepared;
  for (std::size_t i = 0; i < n; ++i) prepared.push_back(net.prepare(data[i * data.size() / n].cloud));
  net.calibrate(prepared);
}

/// Triplet metric learning with batch-hard mining and dynamic batch sizing.
///
/// Each step embeds the batch without keeping graphs, mines triplets, takes
/// the loss gradient with respect to the descriptors, then replays each
/// sample's forward pass and backpropagates that descriptor gradient. The
/// parameter gradient is exact; memory stays at one sample graph.
template <typename T>
class Trainer {
 public:
  Trainer(RprNet<T>& net, TrainConfig cfg) : net_(net), cfg_(cfg), optimizer_(cfg.optimizer), batch_(cfg.batch) {
    cfg_.triplet.validate();
    cfg_.augment.validate();
    cfg_.batch.validate();
  }

  ad::RAdam<T>& optimizer() { return optimizer_; }
  const BatchState& batch_state() const { return batch_; }
  void set_batch_state(const BatchState& s) { batch_ = s; }
  int epochs_done() const { return epoch_; }
  void set_epochs_done(int e) { epoch_ = e; }

  EpochMetrics run_epoch(const std::vector<TrainingSample<T>>& data) {
    std::vector<Eigen::Vector2d> positions;
    for (const auto& s : data) positions.push_back(s.position);
    const auto stream = compose_epoch(positions, cfg_.triplet.pos_radius, derive_seed(cfg_.seed, {1, static_cast<std::uint64_t>(epoch_)}));
    EpochMetrics m;
    m.epoch = epoch_ + 1;
    m.batch_size = batch_.current_size;
    double loss_sum = 0.0, active_sum = 0.0;
    const auto bsz = static_cast<std::size_t>(batch_.current_size);
    for (std::size_t start = 0; start + 1 < stream.size(); start += bsz) {
      const std::vector<Index> ids(stream.begin() + static_cast<std::ptrdiff_t>(start),
                                   stream.begin() + static_cast<std::ptrdiff_t>(std::min(stream.size(), start + bsz)));
      StepResult r;
      try {
        r = step(data, ids);
      } catch (const EmptyBatch&) {
        continue;
      }
      ++m.batches;
      m.triplets += r.triplets;
      m.active_triplets += r.active;
      loss_sum += r.loss;
      active_sum += static_cast<double>(r.active);
    }
    if (m.batches > 0) {
      m.loss = loss_sum / static_cast<double>(m.batches);
      const double mean_active = active_sum / static_cast<double>(m.batches);
      m.active_ratio = mean_active / static_cast<double>(batch_.current_size);
      batch_ = dynamic_batch_update(batch_, mean_active, m.triplets);
    }
    optimizer_.config().lr *= cfg_.lr_decay;
    ++epoch_;
    return m;
  }

  std::vector<EpochMetrics> train(const std::vector<TrainingSample<T>>& data, int epochs,
                                  const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    std::vector<EpochMetrics> hist;
    for (int e = 0; e < epochs; ++e) {
      hist.push_back(run_epoch(data));
      if (on_epoch) on_epoch(hist.back());
    }
    return hist;
  }

 private:
  struct StepResult {
    double loss = 0.0;
    Index triplets = 0;
    Index active = 0;
  };

  StepResult step(const std::vector<TrainingSample<T>>& data, const std::vector<Index>& ids) {
    const Index b = static_cast<Index>(ids.size());
    std::vector<PreparedCloud<T>> prepared;
    std::vector<Eigen::Vector2d> positions;
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> desc(b, net_.config().descriptor_dim);
    for (Index i = 0; i < b; ++i) {
      const Index id = ids[static_cast<std::size_t>(i)];
      const auto& s = data[static_cast<std::size_t>(id)];
      const auto seed = derive_seed(cfg_.seed, {2, static_cast<std::uint64_t>(epoch_), static_cast<std::uint64_t>(id)});
      prepared.push_back(net_.prepare(augment(s.cloud, cfg_.augment, seed)));
      positions.push_back(s.position);
      desc.row(i) = net_.embed(prepared.back()).transpose();
    }
    const auto triplets = batch_hard_mine(desc, positions, cfg_.triplet);

    StepResult r;
    r.triplets = static_cast<Index>(triplets.size());
    std::vector<ad::Array<T>> desc_grads;
    {
      ad::Graph<T> g;
      std::vector<ad::Var<T>> leaves;
      for (Index i = 0; i < b; ++i) leaves.push_back(g.variable(ad::Shape{desc.cols()}, desc.row(i).transpose().array()));
      const ad::Var<T> loss = triplet_batch_loss(leaves, triplets, T(cfg_.triplet.margin));
      r.loss = static_cast<double>(loss.item());
      if (!std::isfinite(r.loss)) throw NumericalError("training: non-finite loss");
      for (const Triplet& t : triplets) {
        const double dp = static_cast<double>((desc.row(t.anchor) - desc.row(t.positive)).norm());
        const double dn = static_cast<double>((desc.row(t.anchor) - desc.row(t.negative)).norm());
        if (triplet_loss(dp, dn, cfg_.triplet.margin) > 0.0) ++r.active;
      }
      g.backward(loss);
      for (const auto& l : leaves) desc_grads.push_back(g.has_grad(l.id()) ? g.grad(l.id()) : ad::Array<T>::Zero(desc.cols()));
    }

    auto& params = net_.parameters();
    std::vector<ad::Array<T>> grads;
    for (std::size_t p = 0; p < params.size(); ++p) grads.push_back(ad::Array<T>::Zero(params[p].shape.size()));
    for (Index i = 0; i < b; ++i) {
      const auto& dg = desc_grads[static_cast<std::size_t>(i)];
      if ((dg == T(0)).all()) continue;
      ad::Graph<T> g;
      const ad::Var<T> d = net_.forward(g, prepared[static_cast<std::size_t>(i)]);
      g.backward(d, dg);
      for (std::size_t p = 0; p < params.size(); ++p) grads[p] += g.parameter_grad(params[p]);
    }
    optimizer_.step(params, grads);
    auto& p = net_.gem_exponent().value(0);
    p = std::clamp(p, T(kGemPMin), T(kGemPMax));
    return r;
  }

  RprNet<T>& net_;
  TrainConfig cfg_;
  ad::RAdam<T> optimizer_;
  BatchState batch_;
  int epoch_ = 0;
};

}  // namespace rpr
