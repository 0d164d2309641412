#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rpr/ad/graph.hpp"
#include "rpr/ad/ops.hpp"
#include "rpr/ariconv.hpp"
#include "rpr/geometry.hpp"
#include "rpr/rif.hpp"

namespace rpr {

/// First-layer seed feature.
enum class StemInput {
  kOnes,    // constant 1 column
  kRadial,  // |x| of each seed
};

struct RprNetConfig {
  Index n_seeds = 1024;
  Index k = 32;
  Index channels = 64;
  Index final_channels = 256;
  Index descriptor_dim = 256;
  double gem_p_init = 3.0;
  double ss_sigma = 0.2;
  Index kernel_hidden = 64;
  Index attention_reduction = 16;
  Index attention_max_bottleneck = 256;
  AttentionPool attention_pool = AttentionPool::kGlobal;
  StemInput stem_input = StemInput::kOnes;
  Index fps_start = 0;

  /// n_seeds=256, K=16, channels=16, final=64.
  static RprNetConfig desk() {
    RprNetConfig c;
    c.n_seeds = 256;
    c.k = 16;
    c.channels = 16;
    c.final_channels = 64;
    c.descriptor_dim = 64;
    return c;
  }

  void validate() const {
    if (n_seeds < 2 || k < 2 || k > n_seeds) throw InvalidArgument("config: need 2 <= k <= n_seeds");
    if (channels < 1 || kernel_hidden < 1 || attention_reduction < 1) throw InvalidArgument("config: widths must be positive");
    if (final_channels != 4 * channels) throw InvalidArgument("config: final_channels must equal 4 * channels");
    if (descriptor_dim != final_channels) throw InvalidArgument("config: descriptor_dim must equal final_channels");
    if (!(gem_p_init >= 1.0 && gem_p_init <= 64.0)) throw InvalidArgument("config: gem_p_init must lie in [1, 64]");
    if (!(ss_sigma > 0.0)) throw InvalidArgument("config: ss_sigma must be positive");
  }
};

inline constexpr double kGemEps = 1e-6;
inline constexpr double kGemPMin = 1.0;
inline constexpr double kGemPMax = 64.0;

/// Shapes of the six blocks: stem, four dense blocks, fusion.
inline std::vector<AriConvShape> block_shapes(const RprNetConfig& cfg) {
  std::vector<AriConvShape> shapes;
  for (int b = 0; b < 6; ++b) {
    AriConvShape s;
    s.c_in = b == 0 ? 1 : (b == 5 ? 4 * cfg.channels : cfg.channels);
    s.c_out = b == 5 ? cfg.final_channels : cfg.channels;
    s.hidden = cfg.kernel_hidden;
    s.reduction = cfg.attention_reduction;
    s.max_bottleneck = cfg.attention_max_bottleneck;
    s.group_size = cfg.k;
    s.pool = cfg.attention_pool;
    shapes.push_back(s);
  }
  return shapes;
}

/// Trainable element count implied by a config, without allocating a model.
inline Index parameter_count(const RprNetConfig& cfg) {
  Index n = 1;  // GeM exponent
  for (const auto& s : block_shapes(cfg)) {
    const Index c = s.latent(), h = s.hidden;
    n += kRifChannels * h + h + h * c + c;
    if (s.single_fc()) n += c * c + c;
    else n += c * s.bottleneck() + s.bottleneck() + s.bottleneck() * c + c;
    n += s.c_out * s.c_out + s.c_out;
  }
  return n;
}

/// Channel-wise generalized mean: (mean_n max(f, eps)^p)^(1/p).
template <typename T>
ad::Var<T> gem_pool(ad::Var<T> features, ad::Var<T> p, T eps = T(kGemEps)) {
  const ad::Var<T> powered = ad::pow(ad::clamp_min(features, eps), p);
  return ad::pow(ad::mean(powered, {0}), ad::reciprocal(p));
}

/// Sampling, grouping and RIFs of one cloud; computed once and shared by all
/// blocks.
template <typename T>
struct PreparedCloud {
  GroupIndex group;
  PointCloud<T> seeds;
  RifTensor<T> rifs;
};

template <typename T>
using Descriptor = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Stem block, four densely connected blocks and a fusion block followed by
/// GeM pooling.
template <typename T>
class RprNet {
 public:
  using Var = ad::Var<T>;
  using Graph = ad::Graph<T>;

  explicit RprNet(RprNetConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const auto shapes = block_shapes(cfg_);
    for (std::size_t b = 0; b < shapes.size(); ++b) blocks_.emplace_back(params_, "block" + std::to_string(b), shapes[b]);
    gem_p_ = &params_.add("gem.p", {1});
    gem_p_->value(0) = T(cfg_.gem_p_init);
  }

  RprNet(const RprNet&) = delete;
  RprNet& operator=(const RprNet&) = delete;
  RprNet(RprNet&&) = default;

  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& b : blocks_) b.initialize(rng);
    gem_p_->value(0) = T(cfg_.gem_p_init);
  }

  /// Data-dependent rescaling after initialize(): walks the blocks in order
  /// and sets each block's output gain so its RMS activation over `samples`
  /// equals `target`. Gains are positive, so dead units and invariance are
  /// untouched.
  void calibrate(const std::vector<PreparedCloud<T>>& samples, double target = 1.0) {
    if (samples.empty()) throw InvalidArgument("calibrate: no samples");
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      double sum_sq = 0.0;
      Index count = 0;
      for (const auto& s : samples) {
        Graph g;
        const auto outs = block_outputs(g, s);
        const auto v = outs[b].value();
        sum_sq += static_cast<double>(v.square().sum());
        count += v.size();
      }
      const double rms = std::sqrt(sum_sq / static_cast<double>(count));
      if (rms > 0.0 && std::isfinite(rms)) blocks_[b].output_gain().value(0) *= T(target / rms);
    }
  }

  const RprNetConfig& config() const { return cfg_; }
  ad::ParameterSet<T>& parameters() { return params_; }
  const ad::ParameterSet<T>& parameters() const { return params_; }
  const std::vector<AriConv<T>>& blocks() const { return blocks_; }
  ad::Parameter<T>& gem_exponent() { return *gem_p_; }
  Index count_parameters() const { return params_.count_trainable(); }

  PreparedCloud<T> prepare(const PointCloud<T>& cloud) const {
    check_finite(cloud);
    if (cloud.rows() < cfg_.n_seeds) {
      throw InvalidCloud("cloud has " + std::to_string(cloud.rows()) + " points, model needs at least " +
                         std::to_string(cfg_.n_seeds));
    }
    return prepare(cloud, sample_and_group(cloud, cfg_.n_seeds, cfg_.k, cfg_.fps_start));
  }

  /// Reuses an existing sampling/grouping (e.g. of the unrotated cloud).
  PreparedCloud<T> prepare(const PointCloud<T>& cloud, GroupIndex group) const {
    check_finite(cloud);
    if (group.num_seeds() != cfg_.n_seeds || group.k != cfg_.k) {
      throw InvalidArgument("group index does not match the model's n_seeds/K");
    }
    PreparedCloud<T> p;
    p.seeds = select_rows(cloud, group.seed_ids);
    p.rifs = assemble_rifs(p.seeds, group, T(cfg_.ss_sigma));
    p.group = std::move(group);
    return p;
  }

  /// Per-block outputs o_0..o_5, for inspection.
  std::vector<Var> block_outputs(Graph& g, const PreparedCloud<T>& in, KernelPath path = KernelPath::kFactored) const {
    const Index ns = in.group.num_seeds();
    const Var rifs = g.constant(ad::Shape{ns * in.group.k, kRifChannels},
                                Eigen::Map<const ad::Array<T>>(in.rifs.values.data(), in.rifs.values.size()));
    ad::Array<T> stem_in(ns);
    if (cfg_.stem_input == StemInput::kOnes) stem_in.setOnes();
    else stem_in = in.seeds.rowwise().norm().array();
    const Var stem = g.constant(ad::Shape{ns, 1}, std::move(stem_in));
    const IndexTable& nb = in.group.neighbor_ids;

    std::vector<Var> outs;
    outs.push_back(blocks_[0].forward(g, stem, rifs, nb, path));
    Var running = outs[0];
    for (int b = 1; b <= 4; ++b) {
      outs.push_back(blocks_[static_cast<std::size_t>(b)].forward(g, running, rifs, nb, path));
      if (b < 4) running = ad::add(running, outs.back());
    }
    const Var fused_in = ad::concat<T>({outs[1], outs[2], outs[3], outs[4]}, 1);
    outs.push_back(blocks_[5].forward(g, fused_in, rifs, nb, path));
    return outs;
  }

  /// Descriptor node of shape [descriptor_dim].
  Var forward(Graph& g, const PreparedCloud<T>& in, KernelPath path = KernelPath::kFactored) const {
    const auto outs = block_outputs(g, in, path);
    return gem_pool(outs.back(), g.parameter(*gem_p_));
  }

  Descriptor<T> embed(const PreparedCloud<T>& in, KernelPath path = KernelPath::kFactored) const {
    Graph g;
    const Var d = forward(g, in, path);
    return Descriptor<T>(d.value());
  }

  Descriptor<T> embed(const PointCloud<T>& cloud) const { return embed(prepare(cloud)); }

 private:
  RprNetConfig cfg_;
  ad::ParameterSet<T> params_;
  std::vector<AriConv<T>> blocks_;
  ad::Parameter<T>* gem_p_ = nullptr;
};

}  // namespace rpr
