#pragma once

#include <string>

#include "rpr/ad/optimizer.hpp"
#include "rpr/errors.hpp"
#include "rpr/io.hpp"
#include "rpr/network.hpp"
#include "rpr/training.hpp"

namespace rpr {

namespace detail {

template <typename T>
TensorBlob to_blob(const std::string& name, const ad::Shape& shape, const ad::Array<T>& values) {
  TensorBlob b;
  b.name = name;
  for (int i = 0; i < shape.rank(); ++i) b.shape.push_back(shape[i]);
  b.values.resize(static_cast<std::size_t>(values.size()));
  for (Index i = 0; i < values.size(); ++i) b.values[static_cast<std::size_t>(i)] = static_cast<float>(values(i));
  return b;
}

template <typename T>
ad::Array<T> from_blob(const TensorBlob& b, const ad::Parameter<T>& p) {
  bool same = static_cast<int>(b.shape.size()) == p.shape.rank();
  for (int i = 0; same && i < p.shape.rank(); ++i) same = b.shape[static_cast<std::size_t>(i)] == p.shape[i];
  if (!same || static_cast<Index>(b.values.size()) != p.shape.size()) {
    throw FormatError("checkpoint: shape mismatch for parameter " + p.name, 0);
  }
  ad::Array<T> out(p.shape.size());
  for (Index i = 0; i < out.size(); ++i) out(i) = static_cast<T>(b.values[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace detail

/// Snapshot of a model and, when given, its optimizer and batch state.
/// Values are stored at 32-bit.
template <typename T>
Checkpoint make_checkpoint(const RprNet<T>& net, const std::string& config_text, std::int64_t epoch,
                           const ad::RAdam<T>* optimizer = nullptr, Index batch_size = 0) {
  Checkpoint ck;
  ck.config_text = config_text;
  ck.epoch = epoch;
  ck.batch_size = batch_size;
  const auto& params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) ck.parameters.push_back(detail::to_blob(params[i].name, params[i].shape, params[i].value));
  if (optimizer != nullptr) {
    const auto& st = optimizer->state();
    ck.optimizer_step = st.step;
    for (std::size_t i = 0; i < st.m.size() && i < params.size(); ++i) {
      ck.optimizer_m.push_back(detail::to_blob(params[i].name, params[i].shape, st.m[i]));
      ck.optimizer_v.push_back(detail::to_blob(params[i].name, params[i].shape, st.v[i]));
    }
  }
  return ck;
}

/// Copies parameter values (matched by name) into `net`, and optimizer moments into `optimizer`.
template <typename T>
void restore_checkpoint(const Checkpoint& ck, RprNet<T>& net, ad::RAdam<T>* optimizer = nullptr) {
  auto& params = net.parameters();
  if (ck.parameters.size() != params.size()) throw FormatError("checkpoint: parameter count does not match the model", 0);
  for (const TensorBlob& b : ck.parameters) {
    ad::Parameter<T>* p = params.find(b.name);
    if (p == nullptr) throw FormatError("checkpoint: unknown parameter " + b.name, 0);
    p->value = detail::from_blob(b, *p);
  }
  if (optimizer == nullptr) return;
  auto& st = optimizer->state();
  st.step = ck.optimizer_step;
  st.m.clear();
  st.v.clear();
  if (ck.optimizer_m.empty()) return;
  if (ck.optimizer_m.size() != params.size() || ck.optimizer_v.size() != params.size()) {
    throw FormatError("checkpoint: optimizer state does not match the model", 0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m.push_back(detail::from_blob(ck.optimizer_m[i], params[i]));
    st.v.push_back(detail::from_blob(ck.optimizer_v[i], params[i]));
  }
}

}  // namespace rpr
