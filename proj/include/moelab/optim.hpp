// Copyright (c) 2026 moelab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "moelab/errors.hpp"
#include "moelab/tensor.hpp"

namespace moelab {

// A trainable tensor with a stable name (used for checkpoints and error
// messages). Parameter order defines optimizer-state and serialization order.
struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct AdamWConfig {
  float lr = 2.5e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;
};

// First/second moment buffers, one pair per parameter, plus the shared step
// counter used for bias correction.
struct AdamWState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  int64_t step = 0;
};

// Global L2 norm over all parameter gradients, accumulated in double.
// Parameters without an allocated gradient contribute zero.
inline double global_grad_norm(const std::vector<NamedParam>& params) {
  double ss = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    const float* g = p.tensor.grad();
    for (size_t i = 0; i < p.tensor.numel(); ++i)
      ss += static_cast<double>(g[i]) * g[i];
  }
  return std::sqrt(ss);
}

// Scale all gradients by max_norm/norm when the global norm exceeds max_norm.
// Returns the pre-clip norm.
inline double clip_grad_norm(std::vector<NamedParam>& params, float max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      float* g = p.tensor.grad();
      for (size_t i = 0; i < p.tensor.numel(); ++i) g[i] *= s;
    }
  }
  return norm;
}

// One decoupled-weight-decay Adam step. Weight decay multiplies the parameter
// by (1 - lr*wd) before the moment update is applied, independent of the
// gradient. A parameter with no gradient this step is treated as having a
// zero gradient: its moments decay and weight decay still applies.
// Non-finite gradients abort with the parameter's name.
inline void adamw_step(std::vector<NamedParam>& params, AdamWState& state,
                       const AdamWConfig& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].tensor.numel(), 0.0f);
      state.v[i].assign(params[i].tensor.numel(), 0.0f);
    }
  }
  if (state.m.size() != params.size())
    throw ConfigError("adamw_step: state holds " +
                      std::to_string(state.m.size()) + " entries for " +
                      std::to_string(params.size()) + " params");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), state.step);
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), state.step);
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& t = params[i].tensor;
    if (state.m[i].size() != t.numel())
      throw ConfigError("adamw_step: size mismatch for parameter " +
                        params[i].name);
    const bool has_g = t.has_grad();
    const float* g = has_g ? t.grad() : nullptr;
    float* w = t.data();
    float* m = state.m[i].data();
    float* v = state.v[i].data();
    for (size_t j = 0; j < t.numel(); ++j) {
      const float gj = has_g ? g[j] : 0.0f;
      if (!std::isfinite(gj))
        throw DataError("adamw_step: non-finite gradient in parameter " +
                        params[i].name);
      m[j] = cfg.beta1 * m[j] + (1.0f - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0f - cfg.beta2) * gj * gj;
      const float mhat = static_cast<float>(m[j] / bc1);
      const float vhat = static_cast<float>(v[j] / bc2);
      w[j] -= cfg.lr * cfg.weight_decay * w[j];
      w[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// Cosine schedule with linear warmup and a floor at min_mult * base:
//   step < warmup:  base * step / warmup
//   otherwise:      base * (min_mult + (1-min_mult) * 0.5 * (1+cos(pi*p)))
// with p = (step-warmup)/(total-warmup) in [0,1]. At step==total the factor
// is exactly min_mult.
inline float cosine_lr(int64_t step, int64_t total_steps, int64_t warmup_steps,
                       float base_lr, float min_mult = 0.1f) {
  if (total_steps <= 0 || step < 0 || step > total_steps)
    throw ConfigError("cosine_lr: step " + std::to_string(step) +
                      " outside [0," + std::to_string(total_steps) + "]");
  if (warmup_steps < 0 || warmup_steps > total_steps)
    throw ConfigError("cosine_lr: warmup " + std::to_string(warmup_steps) +
                      " outside [0," + std::to_string(total_steps) + "]");
  if (step < warmup_steps)
    return base_lr * static_cast<float>(step) /
           static_cast<float>(warmup_steps);
  if (total_steps == warmup_steps) return base_lr;
  const double p = static_cast<double>(step - warmup_steps) /
                   static_cast<double>(total_steps - warmup_steps);
  const double cos_factor = 0.5 * (1.0 + std::cos(M_PI * p));
  return base_lr *
         static_cast<float>(min_mult + (1.0 - min_mult) * cos_factor);
}

}  // namespace moelab
