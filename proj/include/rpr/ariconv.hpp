#pragma once

#include <cmath>
#include <random>
#include <string>

#include "rpr/ad/graph.hpp"
#include "rpr/ad/ops.hpp"
#include "rpr/rif.hpp"

namespace rpr {

/// How the kernel-hat average is pooled before the attention fc.
enum class AttentionPool {
  kGlobal,   // one gate per latent channel, mean over (N_s, K)
  kPerSeed,  // one gate per (seed, channel), mean over K only
};

/// Evaluation strategy for one block. Both compute the same function.
///
/// kMaterialized builds the N_s x K x C_in*C_out kernel tensor and contracts it
/// with the grouped features. kFactored pushes the neighbor sum through the
/// last kernel-MLP layer:
///   f_n(n, o) = sum_{j,i} g(i,o) W2aug(j, i, o) sum_k h(n,k,j) f_sg(n,k,i)
/// which never materializes the kernels (global pooling only).
enum class KernelPath { kFactored, kMaterialized };

struct AriConvShape {
  Index c_in = 1;
  Index c_out = 64;
  Index hidden = 64;               // kernel MLP width H
  Index reduction = 16;            // attention bottleneck ratio r; 1 = single fc
  Index max_bottleneck = 256;      // cap on the bottleneck width B
  Index group_size = 32;           // K, used for initialization scale only
  AttentionPool pool = AttentionPool::kGlobal;

  Index latent() const { return c_in * c_out; }

  Index bottleneck() const {
    const Index b = std::max<Index>(latent() / std::max<Index>(reduction, 1), 8);
    return std::min(b, max_bottleneck);
  }

  bool single_fc() const { return reduction <= 1; }
};

/// Attentive rotation-invariant convolution block: RIFs -> kernels (shared
/// MLP) -> channel gate -> contraction with grouped seed features -> shared
/// output MLP.
template <typename T>
class AriConv {
 public:
  using Var = ad::Var<T>;
  using Graph = ad::Graph<T>;

  AriConv(ad::ParameterSet<T>& params, const std::string& prefix, AriConvShape shape) : shape_(shape) {
    const Index c = shape.latent(), h = shape.hidden;
    w1_ = &params.add(prefix + ".kernel_mlp.w1", {kRifChannels, h});
    b1_ = &params.add(prefix + ".kernel_mlp.b1", {h});
    w2_ = &params.add(prefix + ".kernel_mlp.w2", {h, c});
    b2_ = &params.add(prefix + ".kernel_mlp.b2", {c});
    if (shape.single_fc()) {
      fa_w_ = &params.add(prefix + ".attention_fc.w", {c, c});
      fa_b_ = &params.add(prefix + ".attention_fc.b", {c});
    } else {
      const Index b = shape.bottleneck();
      fa_w_ = &params.add(prefix + ".attention_fc.w1", {c, b});
      fa_b_ = &params.add(prefix + ".attention_fc.b1", {b});
      fb_w_ = &params.add(prefix + ".attention_fc.w2", {b, c});
      fb_b_ = &params.add(prefix + ".attention_fc.b2", {c});
    }
    wo_ = &params.add(prefix + ".output_mlp.w", {shape.c_out, shape.c_out});
    bo_ = &params.add(prefix + ".output_mlp.b", {shape.c_out});
    gain_ = &params.add(prefix + ".output_gain", {1}, false);
    gain_->value.setOnes();
  }

  const AriConvShape& shape() const { return shape_; }

  /// Fixed multiplier on the kernel MLP output, 1 / (K * sqrt(C_in)). The
  /// kernels of one group are strongly correlated, so the neighbor sum grows
  /// like K rather than sqrt(K). Keeping it outside W2 leaves W2 at unit-scale
  /// init, where a fixed optimizer step is a small relative change.
  T kernel_scale() const {
    return T(1.0 / (static_cast<double>(shape_.group_size) * std::sqrt(static_cast<double>(shape_.c_in))));
  }

  /// He-style initialization. The output gain is reset to 1.
  void initialize(std::mt19937_64& rng) {
    auto fill = [&](ad::Parameter<T>& p, double stddev) {
      std::normal_distribution<double> n(0.0, stddev);
      for (Index i = 0; i < p.value.size(); ++i) p.value(i) = T(n(rng));
    };
    const double h = static_cast<double>(shape_.hidden);
    fill(*w1_, std::sqrt(2.0 / double(kRifChannels)));
    b1_->value.setZero();
    fill(*w2_, std::sqrt(2.0 / h));
    b2_->value.setZero();
    const double c = static_cast<double>(shape_.latent());
    if (shape_.single_fc()) {
      fill(*fa_w_, 0.1 / std::sqrt(c));
      fa_b_->value.setZero();
    } else {
      const double b = static_cast<double>(shape_.bottleneck());
      fill(*fa_w_, std::sqrt(2.0 / c));
      fa_b_->value.setZero();
      fill(*fb_w_, 0.1 / std::sqrt(b));
      fb_b_->value.setZero();
    }
    fill(*wo_, std::sqrt(2.0 / static_cast<double>(shape_.c_out)));
    bo_->value.setZero();
    gain_->value.setOnes();
  }

  /// Non-trainable positive factor on the block output, set by calibration.
  ad::Parameter<T>& output_gain() { return *gain_; }

  /// Hidden layer of the kernel MLP: [N_s*K, H].
  Var kernel_hidden(Graph& g, Var rifs) const {
    return ad::relu(ad::add(ad::matmul(rifs, g.parameter(*w1_)), g.parameter(*b1_)));
  }

  /// Kernels before attention, kappa_hat: [N_s, K, C_in*C_out].
  Var generate_kernels(Graph& g, Var rifs, Index num_seeds) const {
    const Var h = kernel_hidden(g, rifs);
    const Var kh = ad::scale(ad::add(ad::matmul(h, g.parameter(*w2_)), g.parameter(*b2_)), kernel_scale());
    return ad::reshape(kh, ad::Shape{num_seeds, rifs.shape()[0] / num_seeds, shape_.latent()});
  }

  /// sigmoid(fc(z)) applied to the trailing channel axis of `pooled`.
  Var attention_gate(Graph& g, Var pooled) const {
    if (shape_.single_fc()) {
      return ad::sigmoid(ad::add(ad::matmul(pooled, g.parameter(*fa_w_)), g.parameter(*fa_b_)));
    }
    const Var hidden = ad::relu(ad::add(ad::matmul(pooled, g.parameter(*fa_w_)), g.parameter(*fa_b_)));
    return ad::sigmoid(ad::add(ad::matmul(hidden, g.parameter(*fb_w_)), g.parameter(*fb_b_)));
  }

  /// kappa = kappa_hat * sigmoid(fc(avg_pool(kappa_hat))).
  Var attend_kernels(Graph& g, Var kernel_hat) const {
    const Index ns = kernel_hat.shape()[0], c = kernel_hat.shape()[2];
    if (shape_.pool == AttentionPool::kGlobal) {
      const Var z = ad::reshape(ad::mean(kernel_hat, {0, 1}), ad::Shape{1, c});
      return ad::mul(kernel_hat, attention_gate(g, z));
    }
    const Var z = ad::mean(kernel_hat, {1});
    const Var gate = attention_gate(g, z);
    return ad::mul(kernel_hat, ad::reshape(gate, ad::Shape{ns, 1, c}));
  }

  /// f_n(n, o) = sum_k sum_i kappa(n, k, i, o) f_sg(n, k, i).
  static Var convolve(Var kappa, Var grouped, Index c_in, Index c_out) {
    const ad::Shape& ks = kappa.shape();
    const ad::Shape& fs = grouped.shape();
    if (ks.rank() != 3 || fs.rank() != 3 || ks[0] != fs[0] || ks[1] != fs[1] || fs[2] != c_in ||
        ks[2] != c_in * c_out) {
      throw ShapeError("convolve: kernel " + ks.str() + " incompatible with grouped features " + fs.str());
    }
    const Var k4 = ad::reshape(kappa, ad::Shape{ks[0], ks[1], c_in, c_out});
    return ad::contract("nkio,nki->no", k4, grouped);
  }

  /// Grouped features f_sg [N_s, K, C_in] -> f_so [N_s, C_out].
  Var forward_grouped(Graph& g, Var grouped, Var rifs, KernelPath path = KernelPath::kFactored) const {
    const Index ns = grouped.shape()[0], k = grouped.shape()[1];
    if (grouped.shape()[2] != shape_.c_in) {
      throw ShapeError("ariconv: expected " + std::to_string(shape_.c_in) + " input channels, got " + grouped.shape().str());
    }
    if (rifs.shape().rank() != 2 || rifs.shape()[0] != ns * k || rifs.shape()[1] != kRifChannels) {
      throw ShapeError("ariconv: RIF block " + rifs.shape().str() + " does not match grouped features " + grouped.shape().str());
    }
    Var f_n;
    if (path == KernelPath::kMaterialized || shape_.pool == AttentionPool::kPerSeed) {
      const Var kappa = attend_kernels(g, generate_kernels(g, rifs, ns));
      f_n = convolve(kappa, grouped, shape_.c_in, shape_.c_out);
    } else {
      f_n = factored_convolution(g, grouped, rifs);
    }
    const Var out = ad::relu(ad::add(ad::matmul(f_n, g.parameter(*wo_)), g.parameter(*bo_)));
    return ad::mul(out, g.parameter(*gain_));
  }

  /// Seed features [N_s, C_in] -> [N_s, C_out], grouping through `neighbors`.
  Var forward(Graph& g, Var features, Var rifs, const IndexTable& neighbors,
              KernelPath path = KernelPath::kFactored) const {
    return forward_grouped(g, ad::gather(features, neighbors), rifs, path);
  }

 private:
  Var factored_convolution(Graph& g, Var grouped, Var rifs) const {
    const Index ns = grouped.shape()[0], k = grouped.shape()[1];
    const Index h = shape_.hidden, ci = shape_.c_in, co = shape_.c_out, c = shape_.latent();
    const Var hid = kernel_hidden(g, rifs);
    // avg_pool of kappa_hat equals the kernel layer applied to the mean hidden vector.
    const Var h_mean = ad::reshape(ad::mean(hid, {0}), ad::Shape{1, h});
    const Var z = ad::scale(ad::add(ad::matmul(h_mean, g.parameter(*w2_)), g.parameter(*b2_)), kernel_scale());
    const Var gate = attention_gate(g, z);
    const Var ones = g.constant(ad::Shape{ns * k, 1}, ad::Array<T>::Ones(ns * k));
    const Var h_aug = ad::reshape(ad::concat<T>({hid, ones}, 1), ad::Shape{ns, k, h + 1});
    const Var moments = ad::batched_matmul(h_aug, grouped, true);  // [N_s, H+1, C_in]
    const Var w_aug = ad::concat<T>({g.parameter(*w2_), ad::reshape(g.parameter(*b2_), ad::Shape{1, c})}, 0);
    const Var w_gated = ad::reshape(ad::mul(ad::scale(w_aug, kernel_scale()), gate), ad::Shape{(h + 1) * ci, co});
    return ad::matmul(ad::reshape(moments, ad::Shape{ns, (h + 1) * ci}), w_gated);
  }

  AriConvShape shape_;
  ad::Parameter<T>* w1_ = nullptr;
  ad::Parameter<T>* b1_ = nullptr;
  ad::Parameter<T>* w2_ = nullptr;
  ad::Parameter<T>* b2_ = nullptr;
  ad::Parameter<T>* fa_w_ = nullptr;
  ad::Parameter<T>* fa_b_ = nullptr;
  ad::Parameter<T>* fb_w_ = nullptr;
  ad::Parameter<T>* fb_b_ = nullptr;
  ad::Parameter<T>* wo_ = nullptr;
  ad::Parameter<T>* bo_ = nullptr;
  ad::Parameter<T>* gain_ = nullptr;
};

}  // namespace rpr
