// Copyright (c) 2026 moelab authors
// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer whose feed-forward sublayer is either a dense FFN
// or a mixture-of-experts layer. Pre-norm RMSNorm blocks, learned absolute
// positional embeddings, untied output head. The forward pass can capture
// every routing decision into caller-owned RoutingRecord buffers.

#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "moelab/errors.hpp"
#include "moelab/moe.hpp"
#include "moelab/optim.hpp"
#include "moelab/rng.hpp"
#include "moelab/tensor.hpp"

namespace moelab {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
  int d_model = 128;
  int n_heads = 4;
  int d_head = 32;
  int n_layers = 4;
  int vocab_size = 256;
  int seq_len = 256;
  MoeConfig moe;
  // Layers whose FFN sublayer is a routed MoE; empty means every layer.
  // Layers outside the set (and every layer of a dense-variant model) use a
  // single dense FFN with hidden size moe.expert_dim.
  std::vector<int> moe_layer_indices;
};

inline bool is_moe_layer(const ModelConfig& cfg, int layer) {
  if (cfg.moe.variant == MoeVariant::kDense) return false;
  if (cfg.moe_layer_indices.empty()) return true;
  return std::find(cfg.moe_layer_indices.begin(), cfg.moe_layer_indices.end(),
                   layer) != cfg.moe_layer_indices.end();
}

inline void validate(const ModelConfig& cfg) {
  if (cfg.d_model <= 0 || cfg.n_heads <= 0 || cfg.d_head <= 0 ||
      cfg.n_layers <= 0 || cfg.vocab_size <= 1)
    throw ConfigError("model dimensions must be positive (vocab >= 2)");
  if (cfg.d_model != cfg.n_heads * cfg.d_head)
    throw ConfigError("d_model " + std::to_string(cfg.d_model) +
                      " != n_heads * d_head = " +
                      std::to_string(cfg.n_heads * cfg.d_head));
  if (cfg.seq_len < 2)
    throw ConfigError("seq_len must be >= 2, got " +
                      std::to_string(cfg.seq_len));
  for (int l : cfg.moe_layer_indices)
    if (l < 0 || l >= cfg.n_layers)
      throw ConfigError("moe layer index " + std::to_string(l) +
                        " outside [0, " + std::to_string(cfg.n_layers) + ")");
  validate(cfg.moe);
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct Block {
  Tensor norm1;  // [d] RMSNorm gain before attention
  Tensor wq, wk, wv, wo;
  Tensor norm2;  // [d] RMSNorm gain before the FFN/MoE sublayer
  MoeLayer moe;
};

struct Model {
  ModelConfig cfg;
  Tensor tok_emb;     // [V x d]
  Tensor pos_emb;     // [seq_len x d]
  std::vector<Block> blocks;
  Tensor final_norm;  // [d]
  Tensor head;        // [d x V], untied from tok_emb
};

// The FFN sublayer config for one layer: the full MoE config on routed
// layers, a single dense expert elsewhere.
inline MoeConfig layer_moe_config(const ModelConfig& cfg, int layer) {
  if (is_moe_layer(cfg, layer)) return cfg.moe;
  MoeConfig dense = cfg.moe;
  dense.variant = MoeVariant::kDense;
  dense.n_shared = 0;
  return dense;
}

inline Model build_model(const ModelConfig& cfg, uint64_t seed) {
  validate(cfg);
  constexpr float kWeightStd = 0.02f;
  Rng rng(seed);
  Model m;
  m.cfg = cfg;
  const int d = cfg.d_model;
  auto trainable = [](Tensor t) {
    t.set_requires_grad();
    return t;
  };
  m.tok_emb = trainable(Tensor::randn({cfg.vocab_size, d}, rng, kWeightStd));
  m.pos_emb = trainable(Tensor::randn({cfg.seq_len, d}, rng, kWeightStd));
  m.blocks.reserve(static_cast<size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    Block b;
    b.norm1 = trainable(Tensor::full({d}, 1.0f));
    b.wq = trainable(Tensor::randn({d, d}, rng, kWeightStd));
    b.wk = trainable(Tensor::randn({d, d}, rng, kWeightStd));
    b.wv = trainable(Tensor::randn({d, d}, rng, kWeightStd));
    b.wo = trainable(Tensor::randn({d, d}, rng, kWeightStd));
    b.norm2 = trainable(Tensor::full({d}, 1.0f));
    b.moe = build_moe_layer(layer_moe_config(cfg, l), d, rng);
    m.blocks.push_back(std::move(b));
  }
  m.final_norm = trainable(Tensor::full({d}, 1.0f));
  m.head = trainable(Tensor::randn({d, cfg.vocab_size}, rng, kWeightStd));
  return m;
}

inline std::vector<NamedParam> collect_params(Model& m) {
  std::vector<NamedParam> out;
  out.push_back({"tok_emb", m.tok_emb});
  out.push_back({"pos_emb", m.pos_emb});
  for (size_t l = 0; l < m.blocks.size(); ++l) {
    Block& b = m.blocks[l];
    const std::string p = "block" + std::to_string(l) + ".";
    out.push_back({p + "norm1", b.norm1});
    out.push_back({p + "attn.wq", b.wq});
    out.push_back({p + "attn.wk", b.wk});
    out.push_back({p + "attn.wv", b.wv});
    out.push_back({p + "attn.wo", b.wo});
    out.push_back({p + "norm2", b.norm2});
    collect_params(b.moe, p + "moe.", out);
  }
  out.push_back({"final_norm", m.final_norm});
  out.push_back({"head", m.head});
  return out;
}

struct ParamCount {
  long long total = 0;
  long long active = 0;  // parameters touched per token under top-k routing
};

inline ParamCount count_params(const Model& m) {
  ParamCount c;
  Model& mm = const_cast<Model&>(m);
  for (const NamedParam& p : collect_params(mm))
    c.total += static_cast<long long>(p.tensor.numel());
  c.active = c.total;
  for (const Block& b : m.blocks) {
    const MoeConfig& lc = b.moe.cfg;
    if (lc.variant == MoeVariant::kDense) continue;
    // At most top_k routed FFN experts run per token; the rest are idle.
    const long long idle = std::max(0, lc.n_experts - lc.top_k);
    if (!b.moe.experts.empty()) {
      const long long per_expert =
          static_cast<long long>(b.moe.experts[0].w1.numel()) +
          static_cast<long long>(b.moe.experts[0].w2.numel());
      c.active -= idle * per_expert;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct LmForwardOptions {
  PerturbMode perturb = PerturbMode::kNone;
  std::vector<RoutingRecord>* records = nullptr;  // optional sink
  int token_offset = 0;  // base for RoutingRecord::token_position
};

struct LmForwardResult {
  Tensor logits;   // [B*T x V]
  Tensor balance;  // scalar: sum of per-layer balance losses
  Tensor z;        // scalar: sum of per-layer z-losses
  std::vector<AuxLossReport> aux;  // one per layer (empty report when dense)
  size_t routed_ffn_evals = 0;
  size_t shared_ffn_evals = 0;
};

inline LmForwardResult forward_lm(Tape& tape, const Model& model,
                                  const std::vector<int32_t>& tokens, int batch,
                                  int t, const LmForwardOptions& opt = {}) {
  const ModelConfig& cfg = model.cfg;
  if (batch <= 0 || t <= 0 ||
      tokens.size() != static_cast<size_t>(batch) * static_cast<size_t>(t))
    throw ShapeError("forward_lm: " + std::to_string(tokens.size()) +
                     " tokens for batch " + std::to_string(batch) + " x " +
                     std::to_string(t));
  if (t > cfg.seq_len)
    throw ConfigError("sequence length " + std::to_string(t) +
                      " exceeds model seq_len " + std::to_string(cfg.seq_len));

  std::vector<int32_t> positions(tokens.size());
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < t; ++i)
      positions[static_cast<size_t>(b) * t + i] = i;

  LmForwardResult res;
  Tensor h = tape.add(tape.embed_rows(model.tok_emb, tokens),
                      tape.embed_rows(model.pos_emb, positions));
  res.balance = Tensor::scalar(0.0f);
  res.z = Tensor::scalar(0.0f);
  for (size_t l = 0; l < model.blocks.size(); ++l) {
    const Block& b = model.blocks[l];
    Tensor a = tape.rmsnorm(h, b.norm1);
    Tensor att = tape.causal_attention(tape.matmul(a, b.wq),
                                       tape.matmul(a, b.wk),
                                       tape.matmul(a, b.wv), batch,
                                       cfg.n_heads);
    h = tape.add(h, tape.matmul(att, b.wo));

    MoeForwardOptions mo;
    mo.layer_index = static_cast<int>(l);
    mo.token_offset = opt.token_offset;
    mo.perturb = opt.perturb;
    mo.records = opt.records;
    MoeForwardResult r = moe_forward(tape, b.moe, tape.rmsnorm(h, b.norm2), mo);
    h = tape.add(h, r.y);
    res.balance = tape.add(res.balance, r.balance);
    res.z = tape.add(res.z, r.z);
    res.aux.push_back(std::move(r.aux));
    res.routed_ffn_evals += r.routed_ffn_evals;
    res.shared_ffn_evals += r.shared_ffn_evals;
  }
  res.logits = tape.matmul(tape.rmsnorm(h, model.final_norm), model.head);
  return res;
}

// ---------------------------------------------------------------------------
// Upcycling a dense checkpoint into an MoE model
// ---------------------------------------------------------------------------

namespace detail {
inline void copy_named(Tensor& dst, const Tensor& src, const std::string& name) {
  if (!dst.same_shape(src))
    throw ManifestError("upcycle: " + name + " shape " + src.shape_string() +
                        " does not match target " + dst.shape_string());
  dst.values() = src.values();
}
}  // namespace detail

// Initializes `target` from a trained dense model: embeddings, attention,
// norms, and head are copied verbatim; each FFN sublayer is seeded from the
// dense FFN (all routed + shared experts for kFull, shared experts only for
// kSharedOnly). Routers keep their fresh initialization.
inline void upcycle_model(Model& target, const Model& dense_src,
                          UpcycleMode mode) {
  const ModelConfig& a = target.cfg;
  const ModelConfig& b = dense_src.cfg;
  if (b.moe.variant != MoeVariant::kDense)
    throw ConfigError("upcycle source must be a dense-variant model, got " +
                      std::string(variant_name(b.moe.variant)));
  if (a.d_model != b.d_model || a.n_heads != b.n_heads ||
      a.n_layers != b.n_layers || a.vocab_size != b.vocab_size ||
      a.seq_len != b.seq_len)
    throw ConfigError("upcycle: source and target backbone dimensions differ");

  detail::copy_named(target.tok_emb, dense_src.tok_emb, "tok_emb");
  detail::copy_named(target.pos_emb, dense_src.pos_emb, "pos_emb");
  detail::copy_named(target.final_norm, dense_src.final_norm, "final_norm");
  detail::copy_named(target.head, dense_src.head, "head");
  for (size_t l = 0; l < target.blocks.size(); ++l) {
    Block& tb = target.blocks[l];
    const Block& sb = dense_src.blocks[l];
    const std::string p = "block" + std::to_string(l) + ".";
    detail::copy_named(tb.norm1, sb.norm1, p + "norm1");
    detail::copy_named(tb.wq, sb.wq, p + "attn.wq");
    detail::copy_named(tb.wk, sb.wk, p + "attn.wk");
    detail::copy_named(tb.wv, sb.wv, p + "attn.wv");
    detail::copy_named(tb.wo, sb.wo, p + "attn.wo");
    detail::copy_named(tb.norm2, sb.norm2, p + "norm2");
    upcycle_layer(tb.moe, sb.moe.experts[0], mode, static_cast<int>(l));
  }
}

}  // namespace moelab
