// Copyright (c) 2026 moelab authors
// SPDX-License-Identifier: Apache-2.0
//
// Sparse mixture-of-experts layer: routing (top-k with -inf masking, then
// softmax or sigmoid scoring), the seven routing variants, auxiliary losses,
// selection perturbation, and dense-to-MoE upcycling.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "moelab/errors.hpp"
#include "moelab/optim.hpp"
#include "moelab/rng.hpp"
#include "moelab/tensor.hpp"

namespace moelab {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class MoeVariant {
  kDense,      // plain FFN, no routing
  kSmoe,       // top-k + softmax gates
  kSigmaMoe,   // top-k + sigmoid gates (renormalized for mixing)
  kXmoe,       // low-dim cosine routing with learned temperature, softmax
  kSharedV2,   // smoe + always-on shared experts
  kSharedV3,   // sigma_moe + always-on shared experts
  kMoePlusPlus,  // smoe + zero-experts and a copy-expert in the pool
  kTcMoe,      // ternary pool: {+E_i, -E_i} per expert + zero-experts
};

inline const char* variant_name(MoeVariant v) {
  switch (v) {
    case MoeVariant::kDense: return "dense";
    case MoeVariant::kSmoe: return "smoe";
    case MoeVariant::kSigmaMoe: return "sigma_moe";
    case MoeVariant::kXmoe: return "xmoe";
    case MoeVariant::kSharedV2: return "shared_v2";
    case MoeVariant::kSharedV3: return "shared_v3";
    case MoeVariant::kMoePlusPlus: return "moepp";
    case MoeVariant::kTcMoe: return "tcmoe";
  }
  return "?";
}

inline MoeVariant variant_from_name(const std::string& s) {
  for (MoeVariant v :
       {MoeVariant::kDense, MoeVariant::kSmoe, MoeVariant::kSigmaMoe,
        MoeVariant::kXmoe, MoeVariant::kSharedV2, MoeVariant::kSharedV3,
        MoeVariant::kMoePlusPlus, MoeVariant::kTcMoe})
    if (s == variant_name(v)) return v;
  throw ConfigError("unknown MoE variant: '" + s + "'");
}

// Gate activation per variant: sigma_moe and shared_v3 use sigmoid scores,
// everything else softmax.
inline ScoreKind score_kind(MoeVariant v) {
  return (v == MoeVariant::kSigmaMoe || v == MoeVariant::kSharedV3)
             ? ScoreKind::kSigmoid
             : ScoreKind::kSoftmax;
}

struct MoeConfig {
  MoeVariant variant = MoeVariant::kSmoe;
  int n_experts = 8;        // trainable FFN experts
  int top_k = 2;            // routed selections per token
  int n_shared = 0;         // always-on shared experts (shared_v2/v3)
  int expert_dim = 32;      // FFN hidden width
  int xmoe_routing_dim = 16;
  int n_zero_experts = 1;   // appended zero-experts (moepp/tcmoe)
  float router_init_std = 0.02f;
  float balance_coef = 0.01f;
  float z_coef = 0.0f;
  float temperature = 1.0f;  // divides router logits before top-k
};

// One entry of the routable pool. Plain variants route over the FFN experts
// directly; moepp appends parameter-free zero- and copy-experts; tcmoe routes
// over {+E_i, -E_i} plus zero-experts.
struct PoolEntry {
  enum Kind { kFfn, kZero, kCopy, kNegated } kind = kFfn;
  int expert = -1;  // FFN index for kFfn/kNegated
};

inline std::vector<PoolEntry> routable_pool(const MoeConfig& cfg) {
  std::vector<PoolEntry> pool;
  if (cfg.variant == MoeVariant::kDense) return pool;
  if (cfg.variant == MoeVariant::kTcMoe) {
    for (int i = 0; i < cfg.n_experts; ++i)
      pool.push_back({PoolEntry::kFfn, i});
    for (int i = 0; i < cfg.n_experts; ++i)
      pool.push_back({PoolEntry::kNegated, i});
    for (int i = 0; i < cfg.n_zero_experts; ++i)
      pool.push_back({PoolEntry::kZero, -1});
    return pool;
  }
  for (int i = 0; i < cfg.n_experts; ++i) pool.push_back({PoolEntry::kFfn, i});
  if (cfg.variant == MoeVariant::kMoePlusPlus) {
    for (int i = 0; i < cfg.n_zero_experts; ++i)
      pool.push_back({PoolEntry::kZero, -1});
    pool.push_back({PoolEntry::kCopy, -1});
  }
  return pool;
}

inline int n_routable(const MoeConfig& cfg) {
  return static_cast<int>(routable_pool(cfg).size());
}

inline bool has_shared(MoeVariant v) {
  return v == MoeVariant::kSharedV2 || v == MoeVariant::kSharedV3;
}

inline void validate(const MoeConfig& cfg) {
  if (cfg.expert_dim <= 0)
    throw ConfigError("expert_dim must be positive");
  if (cfg.variant == MoeVariant::kDense) return;  // routing fields ignored
  if (cfg.n_experts <= 0) throw ConfigError("n_experts must be positive");
  if (cfg.top_k <= 0) throw ConfigError("top_k must be positive");
  const int nr = n_routable(cfg);
  if (cfg.top_k > nr)
    throw ConfigError("top_k=" + std::to_string(cfg.top_k) + " exceeds " +
                      std::to_string(nr) + " routable experts");
  if (has_shared(cfg.variant)) {
    if (cfg.n_shared < 1)
      throw ConfigError(std::string(variant_name(cfg.variant)) +
                        " requires n_shared >= 1");
  } else if (cfg.n_shared != 0) {
    throw ConfigError(std::string("n_shared is only meaningful for shared "
                                  "variants, got ") +
                      std::to_string(cfg.n_shared) + " with " +
                      variant_name(cfg.variant));
  }
  if (cfg.variant == MoeVariant::kXmoe && cfg.xmoe_routing_dim <= 0)
    throw ConfigError("xmoe_routing_dim must be positive");
  if (cfg.n_zero_experts < 0)
    throw ConfigError("n_zero_experts must be non-negative");
  if (cfg.router_init_std <= 0.0f)
    throw ConfigError("router_init_std must be positive");
  if (cfg.balance_coef < 0.0f || cfg.z_coef < 0.0f)
    throw ConfigError("loss coefficients must be non-negative");
  if (cfg.temperature <= 0.0f)
    throw ConfigError("temperature must be positive");
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

// A two-matrix FFN: y = gelu(x w1) w2, with w1 [d x h], w2 [h x d].
struct Expert {
  Tensor w1, w2;
};

struct MoeLayer {
  MoeConfig cfg;
  int d_model = 0;
  std::vector<Expert> experts;  // cfg.n_experts routed FFNs (1 for dense)
  std::vector<Expert> shared;   // cfg.n_shared always-on FFNs
  Tensor router;                // [d x N_routable] (non-xmoe variants)
  Tensor xmoe_down;             // [d x r]
  Tensor xmoe_emb;              // [r x N_routable] expert embeddings
  Tensor xmoe_log_temp;         // scalar; routing scale is exp(log_temp)
};

// Draw order is fixed (experts, shared, router) so identical seeds produce
// identical layers. All weights are N(0, 0.02) except routing parameters,
// which use cfg.router_init_std (the sweepable knob).
inline MoeLayer build_moe_layer(const MoeConfig& cfg, int d_model, Rng& rng) {
  validate(cfg);
  constexpr float kWeightStd = 0.02f;
  MoeLayer layer;
  layer.cfg = cfg;
  layer.d_model = d_model;
  auto make_expert = [&] {
    Expert e;
    e.w1 = Tensor::randn({d_model, cfg.expert_dim}, rng, kWeightStd);
    e.w2 = Tensor::randn({cfg.expert_dim, d_model}, rng, kWeightStd);
    e.w1.set_requires_grad();
    e.w2.set_requires_grad();
    return e;
  };
  const int n_ffn = cfg.variant == MoeVariant::kDense ? 1 : cfg.n_experts;
  for (int i = 0; i < n_ffn; ++i) layer.experts.push_back(make_expert());
  for (int i = 0; i < cfg.n_shared; ++i) layer.shared.push_back(make_expert());
  if (cfg.variant == MoeVariant::kXmoe) {
    layer.xmoe_down = Tensor::randn({d_model, cfg.xmoe_routing_dim}, rng,
                                    cfg.router_init_std);
    layer.xmoe_emb = Tensor::randn({cfg.xmoe_routing_dim, n_routable(cfg)},
                                   rng, cfg.router_init_std);
    layer.xmoe_log_temp = Tensor::scalar(std::log(10.0f));
    layer.xmoe_down.set_requires_grad();
    layer.xmoe_emb.set_requires_grad();
    layer.xmoe_log_temp.set_requires_grad();
  } else if (cfg.variant != MoeVariant::kDense) {
    layer.router =
        Tensor::randn({d_model, n_routable(cfg)}, rng, cfg.router_init_std);
    layer.router.set_requires_grad();
  }
  return layer;
}

inline void collect_params(MoeLayer& layer, const std::string& prefix,
                           std::vector<NamedParam>& out) {
  for (size_t i = 0; i < layer.experts.size(); ++i) {
    out.push_back({prefix + "expert" + std::to_string(i) + ".w1",
                   layer.experts[i].w1});
    out.push_back({prefix + "expert" + std::to_string(i) + ".w2",
                   layer.experts[i].w2});
  }
  for (size_t i = 0; i < layer.shared.size(); ++i) {
    out.push_back({prefix + "shared" + std::to_string(i) + ".w1",
                   layer.shared[i].w1});
    out.push_back({prefix + "shared" + std::to_string(i) + ".w2",
                   layer.shared[i].w2});
  }
  if (layer.router.defined()) out.push_back({prefix + "router", layer.router});
  if (layer.xmoe_down.defined()) {
    out.push_back({prefix + "xmoe_down", layer.xmoe_down});
    out.push_back({prefix + "xmoe_emb", layer.xmoe_emb});
    out.push_back({prefix + "xmoe_log_temp", layer.xmoe_log_temp});
  }
}

// ---------------------------------------------------------------------------
// Routing
// ---------------------------------------------------------------------------

enum class PerturbMode { kNone, kDropTop1, kDropTop12 };

inline const char* perturb_name(PerturbMode m) {
  switch (m) {
    case PerturbMode::kNone: return "none";
    case PerturbMode::kDropTop1: return "drop_top1";
    case PerturbMode::kDropTop12: return "drop_top1_2";
  }
  return "?";
}

inline PerturbMode perturb_from_name(const std::string& s) {
  if (s == "none") return PerturbMode::kNone;
  if (s == "drop_top1") return PerturbMode::kDropTop1;
  if (s == "drop_top1_2") return PerturbMode::kDropTop12;
  throw ConfigError("unknown perturbation mode: '" + s + "'");
}

// Per-token routing decision for the diagnostics pipeline. selected_ids are
// distinct pool ids ordered by descending gate weight; full_logits is the
// complete pre-mask logit row (after temperature scaling).
struct RoutingRecord {
  int layer = 0;
  int token_position = 0;
  std::vector<int> selected_ids;
  std::vector<float> gate_weights;
  std::vector<float> full_logits;
};

struct AuxLossReport {
  float balance_loss = 0.0f;
  float z_loss = 0.0f;
  std::vector<float> load_fraction;  // f_i over routable pool
  std::vector<float> mean_prob;      // P_i over routable pool
};

struct RouteResult {
  Tensor full_logits;  // [T x N] post-temperature, pre-mask
  Tensor mix_gates;    // [T x N] mixing weights (kept entries sum to 1)
  Tensor raw_gates;    // [T x N] raw activation of masked logits; for the
                       // softmax family this is mix_gates itself
  std::vector<int> ids;  // [T x K], descending gate order
};

// Selection with an optional rank-window shift: drop_top1 selects ranks
// 2..K+1, drop_top1_2 ranks 3..K+2 (replacing the dropped leaders with the
// next experts by logit). Requires K + shift <= N.
inline std::vector<int> select_ids(const Tensor& logits, int k,
                                   PerturbMode mode) {
  const int shift = mode == PerturbMode::kNone ? 0
                    : mode == PerturbMode::kDropTop1 ? 1
                                                     : 2;
  const int m = logits.rows(), n = logits.cols();
  if (k + shift > n)
    throw ConfigError(std::string("perturbation ") + perturb_name(mode) +
                      " needs " + std::to_string(k + shift) +
                      " routable experts, pool has " + std::to_string(n));
  std::vector<int> ranks(static_cast<size_t>(k) + shift);
  std::vector<int> ids(static_cast<size_t>(m) * k);
  for (int t = 0; t < m; ++t) {
    detail::topk_row(logits.data() + static_cast<size_t>(t) * n, n, k + shift,
                     ranks.data());
    for (int r = 0; r < k; ++r)
      ids[static_cast<size_t>(t) * k + r] = ranks[static_cast<size_t>(r) + shift];
  }
  return ids;
}

// Shared gating tail: mask the chosen entries, apply the score activation,
// and (for sigmoid scores) renormalize the kept gates to sum to 1 for output
// mixing while keeping the raw sigmoid values for logging.
inline RouteResult gate_selection(Tape& tape, const Tensor& logits,
                                  const std::vector<int>& ids, int k,
                                  ScoreKind kind) {
  RouteResult res;
  res.full_logits = logits;
  res.ids = ids;
  Tensor masked = tape.mask_rows_at(logits, ids, k);
  if (kind == ScoreKind::kSoftmax) {
    res.mix_gates = tape.softmax_rows(masked);
    res.raw_gates = res.mix_gates;
  } else {
    res.raw_gates = tape.sigmoid(masked);
    res.mix_gates = tape.renorm_rows(res.raw_gates);
  }
  return res;
}

// Router logits for the xmoe variant: cosine similarity between the
// down-projected input and per-expert embeddings, scaled by a learned
// temperature. Cosines are in [-1, 1] before scaling.
inline Tensor xmoe_logits(Tape& tape, const Tensor& x, const Tensor& down_proj,
                          const Tensor& expert_emb, const Tensor& log_temp) {
  Tensor z = tape.matmul(x, down_proj);
  Tensor zn = tape.l2_normalize_rows(z);
  Tensor en = tape.l2_normalize_cols(expert_emb);
  Tensor cosines = tape.matmul(zn, en);
  return tape.scale_by_exp(cosines, log_temp);
}

inline Tensor router_logits(Tape& tape, const MoeLayer& layer,
                            const Tensor& x) {
  if (layer.cfg.variant == MoeVariant::kDense)
    throw ConfigError("dense layers have no router");
  Tensor logits =
      layer.cfg.variant == MoeVariant::kXmoe
          ? xmoe_logits(tape, x, layer.xmoe_down, layer.xmoe_emb,
                        layer.xmoe_log_temp)
          : tape.matmul(x, layer.router);
  if (layer.cfg.temperature != 1.0f)
    logits = tape.scale(logits, 1.0f / layer.cfg.temperature);
  return logits;
}

inline RouteResult route(Tape& tape, const MoeLayer& layer, const Tensor& x,
                         PerturbMode mode = PerturbMode::kNone) {
  const Tensor logits = router_logits(tape, layer, x);
  const std::vector<int> ids = select_ids(logits, layer.cfg.top_k, mode);
  return gate_selection(tape, logits, ids, layer.cfg.top_k,
                        score_kind(layer.cfg.variant));
}

// Standalone xmoe routing with explicit parameters (softmax gating).
inline RouteResult route_xmoe(Tape& tape, const Tensor& x,
                              const Tensor& down_proj, const Tensor& expert_emb,
                              const Tensor& log_temp, int k,
                              PerturbMode mode = PerturbMode::kNone) {
  const Tensor logits = xmoe_logits(tape, x, down_proj, expert_emb, log_temp);
  const std::vector<int> ids = select_ids(logits, k, mode);
  return gate_selection(tape, logits, ids, k, ScoreKind::kSoftmax);
}

// ---------------------------------------------------------------------------
// Auxiliary losses
// ---------------------------------------------------------------------------

struct BalanceResult {
  Tensor loss;  // scalar, on tape (gradient flows through P only)
  std::vector<float> load_fraction;  // f_i
  std::vector<float> mean_prob;      // P_i
};

// Switch-style load balance loss: alpha * N * sum_i f_i * P_i with
// f_i = (1/(T*K)) sum_t 1[i in topK(t)] and P_i the mean pre-mask softmax
// probability. P uses softmax even for sigmoid-gated variants (a pure load
// signal); f is a constant, so gradient reaches the router only through P.
inline BalanceResult balance_loss(Tape& tape, const Tensor& full_logits,
                                  const std::vector<int>& selected_ids, int k,
                                  float alpha) {
  const int t = full_logits.rows(), n = full_logits.cols();
  BalanceResult res;
  res.load_fraction.assign(static_cast<size_t>(n), 0.0f);
  for (int id : selected_ids) res.load_fraction[static_cast<size_t>(id)] += 1.0f;
  const float denom = static_cast<float>(t) * static_cast<float>(k);
  for (auto& f : res.load_fraction) f /= denom;

  Tensor probs = tape.softmax_rows(full_logits);
  res.mean_prob.assign(static_cast<size_t>(n), 0.0f);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < n; ++j)
      res.mean_prob[static_cast<size_t>(j)] +=
          probs.data()[static_cast<size_t>(i) * n + j];
  for (auto& p : res.mean_prob) p /= static_cast<float>(t);

  res.loss = tape.mean_weighted_cols(probs, res.load_fraction,
                                     alpha * static_cast<float>(n));
  return res;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct MoeForwardOptions {
  int layer_index = 0;
  int token_offset = 0;  // base for RoutingRecord::token_position
  PerturbMode perturb = PerturbMode::kNone;
  std::vector<RoutingRecord>* records = nullptr;  // optional sink
};

struct MoeForwardResult {
  Tensor y;        // [T x d]
  Tensor balance;  // scalar on tape (0 for dense)
  Tensor z;        // scalar on tape (0 for dense or z_coef == 0)
  AuxLossReport aux;
  // Sparsity counters: (token, expert-FFN) evaluations this forward.
  size_t routed_ffn_evals = 0;
  size_t shared_ffn_evals = 0;
};

inline Tensor expert_ffn(Tape& tape, const Expert& e, const Tensor& rows) {
  return tape.matmul(tape.gelu(tape.matmul(rows, e.w1)), e.w2);
}

namespace detail {

inline void check_finite_rows(const Tensor& rows, int layer, int expert) {
  for (size_t i = 0; i < rows.numel(); ++i)
    if (!std::isfinite(rows.data()[i]))
      throw DataError("non-finite expert output at layer " +
                      std::to_string(layer) + ", expert " +
                      std::to_string(expert));
}

}  // namespace detail

// The sparse mixture layer: y = sum_{i in topK} gate_i * E_i(x), with shared
// experts (if any) added un-gated. Only selected experts run; tokens are
// bucketed per pool entry so each active expert does one batched FFN pass.
inline MoeForwardResult moe_forward(Tape& tape, const MoeLayer& layer,
                                    const Tensor& x,
                                    const MoeForwardOptions& opt = {}) {
  const MoeConfig& cfg = layer.cfg;
  const int t = x.rows();
  MoeForwardResult res;

  if (cfg.variant == MoeVariant::kDense) {
    res.y = expert_ffn(tape, layer.experts[0], x);
    detail::check_finite_rows(res.y, opt.layer_index, 0);
    // No router: the dense FFN runs unconditionally, so the *routed* counter
    // stays zero by definition.
    res.balance = Tensor::scalar(0.0f);
    res.z = Tensor::scalar(0.0f);
    return res;
  }

  const std::vector<PoolEntry> pool = routable_pool(cfg);
  const int nr = static_cast<int>(pool.size());
  const int k = cfg.top_k;

  const RouteResult routed = route(tape, layer, x, opt.perturb);

  // Bucket tokens by selected pool entry (ascending token order per bucket).
  std::vector<std::vector<int>> bucket(static_cast<size_t>(nr));
  for (int tok = 0; tok < t; ++tok)
    for (int r = 0; r < k; ++r)
      bucket[static_cast<size_t>(routed.ids[static_cast<size_t>(tok) * k + r])]
          .push_back(tok);

  // Combine expert outputs into [t x d] via gated scatter-add.
  Tensor y;
  for (int p = 0; p < nr; ++p) {
    const auto& toks = bucket[static_cast<size_t>(p)];
    if (toks.empty() || pool[static_cast<size_t>(p)].kind == PoolEntry::kZero)
      continue;
    std::vector<size_t> gate_idx(toks.size());
    for (size_t i = 0; i < toks.size(); ++i)
      gate_idx[i] = static_cast<size_t>(toks[i]) * nr + static_cast<size_t>(p);
    Tensor gates = tape.gather_entries(routed.mix_gates, gate_idx);

    Tensor rows;
    const PoolEntry& entry = pool[static_cast<size_t>(p)];
    switch (entry.kind) {
      case PoolEntry::kFfn:
      case PoolEntry::kNegated: {
        Tensor in = tape.gather_rows(x, toks);
        rows = expert_ffn(tape, layer.experts[static_cast<size_t>(entry.expert)],
                          in);
        detail::check_finite_rows(rows, opt.layer_index, entry.expert);
        res.routed_ffn_evals += toks.size();
        if (entry.kind == PoolEntry::kNegated) gates = tape.scale(gates, -1.0f);
        break;
      }
      case PoolEntry::kCopy:
        rows = tape.gather_rows(x, toks);  // identity expert: no matmuls
        break;
      case PoolEntry::kZero:
        continue;  // handled above; keeps the switch exhaustive
    }
    Tensor contrib = tape.scatter_rows_scaled(t, rows, gates, toks);
    y = y.defined() ? tape.add(y, contrib) : contrib;
  }
  if (!y.defined()) y = Tensor::zeros({t, layer.d_model});  // all-zero routing

  for (size_t s = 0; s < layer.shared.size(); ++s) {
    Tensor sv = expert_ffn(tape, layer.shared[s], x);
    detail::check_finite_rows(sv, opt.layer_index, -1 - static_cast<int>(s));
    res.shared_ffn_evals += static_cast<size_t>(t);
    y = tape.add(y, sv);
  }
  res.y = y;

  // Auxiliary losses over the full pre-mask logits.
  BalanceResult bal =
      balance_loss(tape, routed.full_logits, routed.ids, k, cfg.balance_coef);
  res.balance = bal.loss;
  res.z = tape.z_loss(routed.full_logits, cfg.z_coef);
  res.aux.balance_loss = res.balance.item();
  res.aux.z_loss = res.z.item();
  res.aux.load_fraction = std::move(bal.load_fraction);
  res.aux.mean_prob = std::move(bal.mean_prob);

  if (opt.records) {
    const ScoreKind kind = score_kind(cfg.variant);
    for (int tok = 0; tok < t; ++tok) {
      RoutingRecord rec;
      rec.layer = opt.layer_index;
      rec.token_position = opt.token_offset + tok;
      rec.selected_ids.assign(
          routed.ids.begin() + static_cast<size_t>(tok) * k,
          routed.ids.begin() + static_cast<size_t>(tok + 1) * k);
      rec.gate_weights.resize(static_cast<size_t>(k));
      const Tensor& g =
          kind == ScoreKind::kSigmoid ? routed.raw_gates : routed.mix_gates;
      for (int r = 0; r < k; ++r)
        rec.gate_weights[static_cast<size_t>(r)] =
            g.data()[static_cast<size_t>(tok) * nr +
                     static_cast<size_t>(rec.selected_ids[static_cast<size_t>(r)])];
      rec.full_logits.assign(
          routed.full_logits.data() + static_cast<size_t>(tok) * nr,
          routed.full_logits.data() + static_cast<size_t>(tok + 1) * nr);
      opt.records->push_back(std::move(rec));
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Upcycling
// ---------------------------------------------------------------------------

enum class UpcycleMode { kFull, kSharedOnly };

inline UpcycleMode upcycle_from_name(const std::string& s) {
  if (s == "full") return UpcycleMode::kFull;
  if (s == "shared_only") return UpcycleMode::kSharedOnly;
  throw ConfigError("unknown upcycle mode: '" + s + "'");
}

// Copy a dense FFN into the experts of a freshly built MoE layer. kFull
// duplicates it into every routed and shared expert; kSharedOnly only into
// the shared experts, leaving routed experts at their fresh initialization.
// The router is never touched (it keeps its fresh N(0, router_init_std)
// draw). Shape mismatches name the offending arrays.
inline void upcycle_layer(MoeLayer& layer, const Expert& dense_ffn,
                          UpcycleMode mode, int layer_index = 0) {
  auto copy_into = [&](Expert& dst, const std::string& what) {
    if (!dst.w1.same_shape(dense_ffn.w1) || !dst.w2.same_shape(dense_ffn.w2))
      throw ManifestError(
          "upcycle shape mismatch at layer " + std::to_string(layer_index) +
          " (" + what + "): dense w1 " + dense_ffn.w1.shape_string() +
          " w2 " + dense_ffn.w2.shape_string() + " vs expert w1 " +
          dst.w1.shape_string() + " w2 " + dst.w2.shape_string());
    dst.w1.values() = dense_ffn.w1.values();
    dst.w2.values() = dense_ffn.w2.values();
  };
  if (mode == UpcycleMode::kFull)
    for (size_t i = 0; i < layer.experts.size(); ++i)
      copy_into(layer.experts[i], "expert" + std::to_string(i));
  for (size_t i = 0; i < layer.shared.size(); ++i)
    copy_into(layer.shared[i], "shared" + std::to_string(i));
  if (mode == UpcycleMode::kSharedOnly && layer.shared.empty())
    throw ConfigError(
        "shared_only upcycle needs a shared-expert variant, got " +
        std::string(variant_name(layer.cfg.variant)));
}

}  // namespace moelab
