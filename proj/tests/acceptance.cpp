// Copyright (c) 2026 moelab authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate: thirteen end-to-end checks covering forward correctness,
// gradients, upcycling, training trends, routing diagnostics, and
// determinism. Each check prints exactly one [PASS]/[FAIL] line with the
// measured numbers; the process exits with the number of failed checks.
//
// Training runs are cached in a workspace directory (default
// ./acceptance_workspace, override with MOELAB_ACCEPTANCE_DIR) and reused
// across invocations when the configuration hash matches. The first
// invocation trains everything and takes roughly half an hour on one core;
// later invocations finish in about a minute.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "moelab/checkpoint.hpp"
#include "moelab/config.hpp"
#include "moelab/diagnostics.hpp"
#include "moelab/errors.hpp"
#include "moelab/experiments.hpp"
#include "moelab/model.hpp"
#include "moelab/moe.hpp"
#include "moelab/rng.hpp"
#include "moelab/routing_log.hpp"
#include "moelab/tensor.hpp"
#include "moelab/trainer.hpp"

#include "reference.hpp"

using namespace moelab;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Pinned tolerances
// ---------------------------------------------------------------------------
constexpr double kMixtureTol = 1e-5;        // 1: K=N forward vs dense mixture
constexpr int kMixtureTrials = 100;         // 1: trial count
constexpr double kOpGradTol = 1e-4;         // 2: op-level finite differences
constexpr double kE2eGradTol = 1e-3;        // 2: end-to-end finite differences
constexpr double kUpcycleRelTol = 0.005;    // 3: step-0 PPL match, 0.5%
constexpr double kTrendMargin = 0.03;       // 4: MoE at least 3% below dense
constexpr int kMajoritySeeds = 2;           // 5: ordering must hold for >= 2/3
constexpr int kSaturationViolations = 1;    // 7: allowed non-monotone steps
constexpr double kDropSlack = 0.01;         // 8: 1% slack on degradation
constexpr double kSimilarityInitTol = 1e-9; // 10: |similarity(0) - 1|
constexpr double kSimilarityFinal = 0.999;  // 10: final similarity ceiling
constexpr double kOracleTol = 1e-9;         // 11: metric vs brute force
constexpr int kOracleTrials = 100;          // 11: random-log count
constexpr double kBalanceTol = 1e-6;        // 12: balance-loss identities

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// Shared training workspace
// ---------------------------------------------------------------------------

// The full-length laboratory configuration: a 3-block byte-level decoder on
// the default 2 MB synthetic corpus. The mixture uses 8 experts of width 32
// with top-2 routing; the dense baseline widens its FFN to 68 hidden units,
// matching active parameters per token (2*32 for the experts plus 8*64
// router weights = 4 more hidden units' worth at d_model 64).
RunConfig lab_config(MoeVariant v, const std::string& run_id) {
  RunConfig cfg;
  cfg.run_id = run_id;
  cfg.lr = 2.5e-4f;
  cfg.warmup_steps = 100;
  cfg.total_steps = 3000;
  cfg.batch_size = 8;
  cfg.grad_clip = 0.1f;
  cfg.weight_decay = 0.01f;
  cfg.seed = 42;
  cfg.checkpoint_every = 300;
  cfg.eval_every = 300;
  cfg.synth_bytes = 2000000;
  cfg.synth_seed = 7;
  cfg.val_fraction = 0.005;
  cfg.model.d_model = 64;
  cfg.model.n_heads = 2;
  cfg.model.d_head = 32;
  cfg.model.n_layers = 3;
  cfg.model.vocab_size = 256;
  cfg.model.seq_len = 128;
  cfg.model.moe.variant = v;
  cfg.model.moe.n_experts = 8;
  cfg.model.moe.top_k = 2;
  cfg.model.moe.expert_dim = v == MoeVariant::kDense ? 68 : 32;
  cfg.model.moe.xmoe_routing_dim = 16;
  cfg.model.moe.n_shared = has_shared(v) ? 1 : 0;
  cfg.model.moe.router_init_std = 0.02f;
  cfg.model.moe.balance_coef = 0.01f;
  cfg.model.moe.z_coef = 1e-3f;
  return cfg;
}

const std::vector<MoeVariant>& routed_variants() {
  static const std::vector<MoeVariant> kAll = {
      MoeVariant::kSmoe,     MoeVariant::kSigmaMoe, MoeVariant::kXmoe,
      MoeVariant::kSharedV2, MoeVariant::kSharedV3, MoeVariant::kMoePlusPlus,
      MoeVariant::kTcMoe};
  return kAll;
}

const std::vector<MoeVariant>& softmax_variants() {
  static const std::vector<MoeVariant> kSoftmax = {
      MoeVariant::kSmoe, MoeVariant::kXmoe, MoeVariant::kSharedV2,
      MoeVariant::kMoePlusPlus, MoeVariant::kTcMoe};
  return kSoftmax;
}

struct Lab {
  std::string ws;

  explicit Lab(std::string workspace) : ws(std::move(workspace)) {
    fs::create_directories(ws);
  }

  // Trains into `dir` unless a finished identical run is already cached.
  // A leftover directory from an interrupted invocation is retrained.
  void ensure(const RunConfig& cfg, const std::string& dir) const {
    const auto t0 = std::chrono::steady_clock::now();
    bool trained = false;
    try {
      trained = ensure_run(cfg, dir);
    } catch (const ConfigError&) {
      trained = ensure_run(cfg, dir, /*force=*/true);
    }
    std::cerr << "[setup] " << dir << (trained ? " trained in " : " reused (")
              << (trained ? fmt(seconds_since(t0)) + " s" : "cached)")
              << "\n";
  }

  std::string smoe_dir() const { return ws + "/smoe3000"; }
  std::string dense_dir() const { return ws + "/dense3000"; }

  RunConfig smoe_cfg() const { return lab_config(MoeVariant::kSmoe, "smoe3000"); }
  RunConfig dense_cfg() const {
    return lab_config(MoeVariant::kDense, "dense3000");
  }

  void ensure_smoe() const { ensure(smoe_cfg(), smoe_dir()); }
  void ensure_dense() const { ensure(dense_cfg(), dense_dir()); }

  // 600-step runs for the other six routed variants (the full-length run
  // covers the vanilla mixture).
  RunConfig variant_cfg(MoeVariant v) const {
    const std::string name = variant_name(v);
    RunConfig cfg = lab_config(v, "var600_" + name);
    cfg.total_steps = 600;
    cfg.checkpoint_every = 150;
    cfg.eval_every = 150;
    return cfg;
  }

  std::string variant_dir(MoeVariant v) const {
    return ws + "/var600_" + variant_name(v);
  }

  // Run directory per routed variant, training on first use.
  std::string routed_run(MoeVariant v) const {
    if (v == MoeVariant::kSmoe) {
      ensure_smoe();
      return smoe_dir();
    }
    const std::string dir = variant_dir(v);
    ensure(variant_cfg(v), dir);
    return dir;
  }

  // Small 1000-step runs for the router-init sweep.
  RunConfig init_std_cfg(float std_value, int seed) const {
    RunConfig cfg;
    cfg.run_id = "std" + fmt(std_value) + "_s" + std::to_string(seed);
    cfg.lr = 1e-3f;
    cfg.warmup_steps = 50;
    cfg.total_steps = 1000;
    cfg.batch_size = 4;
    cfg.seed = seed;
    cfg.checkpoint_every = 500;
    cfg.eval_every = 500;
    cfg.log_routing_on_eval = false;
    cfg.synth_bytes = 500000;
    cfg.synth_seed = 7;
    cfg.val_fraction = 0.01;
    cfg.model.d_model = 32;
    cfg.model.n_heads = 2;
    cfg.model.d_head = 16;
    cfg.model.n_layers = 2;
    cfg.model.vocab_size = 256;
    cfg.model.seq_len = 64;
    cfg.model.moe.variant = MoeVariant::kSmoe;
    cfg.model.moe.n_experts = 8;
    cfg.model.moe.top_k = 2;
    cfg.model.moe.expert_dim = 16;
    cfg.model.moe.router_init_std = std_value;
    cfg.model.moe.balance_coef = 0.01f;
    cfg.model.moe.z_coef = 0.0f;
    return cfg;
  }

  // Upcycled continuation from the dense baseline's final checkpoint.
  RunConfig upcycled_cfg() const {
    RunConfig cfg = lab_config(MoeVariant::kSmoe, "upcycled600");
    cfg.model.moe.expert_dim = 68;  // experts clone the dense FFN
    cfg.total_steps = 600;
    cfg.checkpoint_every = 300;
    cfg.eval_every = 300;
    cfg.init_mode = InitMode::kUpcycleFull;
    cfg.dense_checkpoint = checkpoint_path(dense_dir(), 3000);
    return cfg;
  }

  std::string upcycled_dir() const { return ws + "/upcycled600"; }
};

// Tiny 10-step configuration for the determinism and balance-column checks.
RunConfig tiny_cfg(const std::string& run_id) {
  RunConfig cfg;
  cfg.run_id = run_id;
  cfg.lr = 1e-3f;
  cfg.warmup_steps = 2;
  cfg.total_steps = 10;
  cfg.batch_size = 2;
  cfg.checkpoint_every = 5;
  cfg.eval_every = 5;
  cfg.synth_bytes = 4000;
  cfg.synth_seed = 3;
  cfg.val_fraction = 0.1;
  cfg.model.d_model = 16;
  cfg.model.n_heads = 2;
  cfg.model.d_head = 8;
  cfg.model.n_layers = 2;
  cfg.model.seq_len = 8;
  cfg.model.moe.n_experts = 4;
  cfg.model.moe.top_k = 2;
  cfg.model.moe.expert_dim = 6;
  return cfg;
}

double final_val_ppl(const std::string& run_dir) {
  return read_eval_log(run_dir).back().val_ppl;
}

EvalResult eval_final(const std::string& run_dir, const EvalOptions& opts = {}) {
  const RunConfig cfg = run_dir_config(run_dir);
  const Model model = model_from_checkpoint(
      load_checkpoint(checkpoint_path(run_dir, cfg.total_steps)));
  return evaluate(model, corpus_for(cfg).val_tokens, cfg.batch_size, opts);
}

// ---------------------------------------------------------------------------
// 1. K=N softmax mixture equals the dense brute-force mixture
// ---------------------------------------------------------------------------

Outcome check_full_mixture() {
  const auto t0 = std::chrono::steady_clock::now();
  const int d = 8, t = 6, h = 5, n = 4;
  double worst = 0.0;
  for (int trial = 0; trial < kMixtureTrials; ++trial) {
    MoeConfig cfg;
    cfg.variant = MoeVariant::kSmoe;
    cfg.n_experts = n;
    cfg.top_k = n;  // keep every expert: routing reduces to a full softmax
    cfg.expert_dim = h;
    cfg.balance_coef = 0.0f;
    Rng rng(1000 + static_cast<uint64_t>(trial));
    const MoeLayer layer = build_moe_layer(cfg, d, rng);
    const Tensor x = Tensor::randn({t, d}, rng, 1.0f);

    Tape tape(false);
    const Tensor y = moe_forward(tape, layer, x).y;

    const ref::dvec xd = ref::to_dvec(x);
    const ref::dvec rd = ref::to_dvec(layer.router);
    std::vector<ref::dvec> expert_out;
    for (const Expert& e : layer.experts)
      expert_out.push_back(ref::ffn(xd, ref::to_dvec(e.w1),
                                    ref::to_dvec(e.w2), t, d, h));
    for (int row = 0; row < t; ++row) {
      ref::dvec logits(n);
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int a = 0; a < d; ++a) acc += xd[row * d + a] * rd[a * n + j];
        logits[j] = acc;
      }
      const ref::dvec p = ref::softmax(logits);
      for (int a = 0; a < d; ++a) {
        double mix = 0.0;
        for (int j = 0; j < n; ++j) mix += p[j] * expert_out[j][row * d + a];
        worst = std::max(
            worst, std::abs(mix - static_cast<double>(
                                      y.data()[static_cast<size_t>(row) * d +
                                               static_cast<size_t>(a)])));
      }
    }
  }
  return {worst < kMixtureTol,
          "max |forward - mixture| " + fmt(worst) + " over " +
              std::to_string(kMixtureTrials) + " trials (tol " +
              fmt(kMixtureTol) + "), " + fmt(seconds_since(t0)) + " s"};
}

// ---------------------------------------------------------------------------
// 2. Gradient suite: op-level and end-to-end finite differences
// ---------------------------------------------------------------------------

Outcome check_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  using ref::dvec;
  using ref::to_dvec;
  using testutil::fd_grad;
  using testutil::max_grad_err;
  using testutil::probe_weights;

  double worst_op = 0.0;
  const auto track = [&](double err) { worst_op = std::max(worst_op, err); };

  {  // matmul, both layouts
    Rng rng(3);
    const int m = 5, k = 7, n = 4;
    for (const bool tb : {false, true}) {
      Tensor a = Tensor::randn({m, k}, rng, 1.0f).set_requires_grad();
      Tensor b =
          Tensor::randn(tb ? std::vector<int>{n, k} : std::vector<int>{k, n},
                        rng, 1.0f)
              .set_requires_grad();
      const auto w = probe_weights(static_cast<size_t>(m) * n, 11);
      Tape tape;
      tape.backward(tape.dot_const(tape.matmul(a, b, tb), w));
      const dvec ad = to_dvec(a), bd = to_dvec(b);
      auto f_a = [&](const dvec& v) {
        const dvec y = ref::matmul(v, bd, m, k, n, tb);
        double acc = 0.0;
        for (size_t i = 0; i < y.size(); ++i) acc += w[i] * y[i];
        return acc;
      };
      auto f_b = [&](const dvec& v) {
        const dvec y = ref::matmul(ad, v, m, k, n, tb);
        double acc = 0.0;
        for (size_t i = 0; i < y.size(); ++i) acc += w[i] * y[i];
        return acc;
      };
      track(max_grad_err(a.grad(), fd_grad(f_a, ad)));
      track(max_grad_err(b.grad(), fd_grad(f_b, bd)));
    }
  }
  {  // gelu
    Rng rng(5);
    Tensor x = Tensor::randn({4, 6}, rng, 1.0f).set_requires_grad();
    const auto w = probe_weights(x.numel(), 12);
    Tape tape;
    tape.backward(tape.dot_const(tape.gelu(x), w));
    auto f = [&](const dvec& v) {
      double acc = 0.0;
      for (size_t i = 0; i < v.size(); ++i) acc += w[i] * ref::gelu(v[i]);
      return acc;
    };
    track(max_grad_err(x.grad(), fd_grad(f, to_dvec(x))));
  }
  {  // rmsnorm, input and gain
    Rng rng(7);
    const int rows = 4, d = 6;
    Tensor x = Tensor::randn({rows, d}, rng, 1.0f).set_requires_grad();
    Tensor g = Tensor::randn({d}, rng, 0.3f).set_requires_grad();
    const auto w = probe_weights(static_cast<size_t>(rows) * d, 13);
    Tape tape;
    tape.backward(tape.dot_const(tape.rmsnorm(x, g), w));
    const dvec xd = to_dvec(x), gd = to_dvec(g);
    auto loss = [&](const dvec& xv, const dvec& gv) {
      double acc = 0.0;
      for (int r = 0; r < rows; ++r) {
        const dvec row(xv.begin() + r * d, xv.begin() + (r + 1) * d);
        const dvec y = ref::rmsnorm_row(row, gv);
        for (int j = 0; j < d; ++j) acc += w[static_cast<size_t>(r) * d + j] * y[j];
      }
      return acc;
    };
    track(max_grad_err(x.grad(),
                       fd_grad([&](const dvec& v) { return loss(v, gd); }, xd)));
    track(max_grad_err(g.grad(),
                       fd_grad([&](const dvec& v) { return loss(xd, v); }, gd)));
  }
  {  // causal attention
    Rng rng(9);
    const int b = 2, t = 3, heads = 2, d = 8;
    Tensor q = Tensor::randn({b * t, d}, rng, 1.0f).set_requires_grad();
    Tensor k = Tensor::randn({b * t, d}, rng, 1.0f).set_requires_grad();
    Tensor v = Tensor::randn({b * t, d}, rng, 1.0f).set_requires_grad();
    const auto w = probe_weights(static_cast<size_t>(b) * t * d, 14);
    Tape tape;
    tape.backward(tape.dot_const(tape.causal_attention(q, k, v, b, heads), w));
    const dvec qd = to_dvec(q), kd = to_dvec(k), vd = to_dvec(v);
    auto loss = [&](const dvec& qv, const dvec& kv, const dvec& vv) {
      const dvec y = ref::attention(qv, kv, vv, b, heads, t, d);
      double acc = 0.0;
      for (size_t i = 0; i < y.size(); ++i) acc += w[i] * y[i];
      return acc;
    };
    track(max_grad_err(
        q.grad(), fd_grad([&](const dvec& u) { return loss(u, kd, vd); }, qd)));
    track(max_grad_err(
        k.grad(), fd_grad([&](const dvec& u) { return loss(qd, u, vd); }, kd)));
    track(max_grad_err(
        v.grad(), fd_grad([&](const dvec& u) { return loss(qd, kd, u); }, vd)));
  }
  {  // cross-entropy over logits
    Rng rng(15);
    const int rows = 6, vocab = 9;
    Tensor logits = Tensor::randn({rows, vocab}, rng, 1.0f).set_requires_grad();
    std::vector<int32_t> targets;
    for (int i = 0; i < rows; ++i)
      targets.push_back(static_cast<int32_t>(rng.next_below(vocab)));
    Tape tape;
    tape.backward(tape.cross_entropy_mean(logits, targets));
    auto f = [&](const dvec& v) {
      return ref::cross_entropy(v, targets, rows, vocab);
    };
    track(max_grad_err(logits.grad(), fd_grad(f, to_dvec(logits))));
  }

  if (worst_op >= kOpGradTol)
    return {false, "op-level gradient error " + fmt(worst_op) + " >= " +
                       fmt(kOpGradTol)};

  // End-to-end: full model loss (cross-entropy + balance + z) against a
  // double-precision straight-line forward, 24 random parameter probes.
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.d_head = 8;
  mc.n_layers = 2;
  mc.vocab_size = 64;
  mc.seq_len = 8;
  mc.moe.variant = MoeVariant::kSmoe;
  mc.moe.n_experts = 4;
  mc.moe.top_k = 2;
  mc.moe.expert_dim = 6;
  mc.moe.router_init_std = 0.3f;  // wide margins keep top-k stable under FD
  mc.moe.balance_coef = 0.01f;
  mc.moe.z_coef = 1e-3f;
  Model m = build_model(mc, 31);
  const int b = 2, t = 4;
  Rng tok_rng(700);
  std::vector<int32_t> ids, targets;
  for (int i = 0; i < b * t; ++i) {
    ids.push_back(static_cast<int32_t>(tok_rng.next_below(mc.vocab_size)));
    targets.push_back(static_cast<int32_t>(tok_rng.next_below(mc.vocab_size)));
  }
  Tape tape;
  LmForwardResult out = forward_lm(tape, m, ids, b, t);
  tape.backward(tape.add(
      tape.add(tape.cross_entropy_mean(out.logits, targets), out.balance),
      out.z));
  auto ref_loss = [&]() {
    const ref::LmOut o = ref::lm_forward(m, ids, b, t);
    return ref::cross_entropy(o.logits, targets, b * t, mc.vocab_size) +
           o.balance + o.z;
  };
  auto params = collect_params(m);
  Rng pick(32);
  double worst_e2e = 0.0;
  for (int checked = 0; checked < 24; ++checked) {
    NamedParam& p = params[pick.next_below(params.size())];
    const size_t j = pick.next_below(p.tensor.numel());
    const float saved = p.tensor.data()[j];
    const double h = 1e-4;
    p.tensor.data()[j] = saved + static_cast<float>(h);
    const double up = ref_loss();
    p.tensor.data()[j] = saved - static_cast<float>(h);
    const double down = ref_loss();
    p.tensor.data()[j] = saved;
    const double fd = (up - down) / (2.0 * h);
    const double analytic =
        p.tensor.has_grad() ? static_cast<double>(p.tensor.grad()[j]) : 0.0;
    worst_e2e = std::max(
        worst_e2e, std::abs(analytic - fd) / std::max(std::abs(fd), 1e-3));
  }

  const bool pass = worst_op < kOpGradTol && worst_e2e < kE2eGradTol;
  return {pass, "op-level err " + fmt(worst_op) + " (tol " + fmt(kOpGradTol) +
                    "), end-to-end err " + fmt(worst_e2e) + " (tol " +
                    fmt(kE2eGradTol) + "), " + fmt(seconds_since(t0)) + " s"};
}

// ---------------------------------------------------------------------------
// 3. Upcycled mixture reproduces the dense validation PPL at step 0
// ---------------------------------------------------------------------------

Outcome check_upcycle_identity(const Lab& lab) {
  lab.ensure_dense();
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig dense_cfg = lab.dense_cfg();
  const Model dense = model_from_checkpoint(
      load_checkpoint(checkpoint_path(lab.dense_dir(), dense_cfg.total_steps)));
  const std::vector<int32_t> val = corpus_for(dense_cfg).val_tokens;
  const double dense_ppl =
      evaluate(dense, val, dense_cfg.batch_size).perplexity;

  RunConfig up_cfg = lab.upcycled_cfg();
  Model upcycled = build_model(up_cfg.model, up_cfg.seed);
  upcycle_model(upcycled, dense, UpcycleMode::kFull);
  const double up_ppl =
      evaluate(upcycled, val, dense_cfg.batch_size).perplexity;

  const double rel = std::abs(up_ppl - dense_ppl) / dense_ppl;
  return {rel < kUpcycleRelTol,
          "dense PPL " + fmt(dense_ppl) + ", upcycled step-0 PPL " +
              fmt(up_ppl) + ", rel diff " + fmt(rel) + " (tol " +
              fmt(kUpcycleRelTol) + "), " + fmt(seconds_since(t0)) + " s"};
}

// ---------------------------------------------------------------------------
// 4. Mixture beats the active-parameter-matched dense baseline by >= 3%
// ---------------------------------------------------------------------------

Outcome check_moe_beats_dense(const Lab& lab) {
  lab.ensure_smoe();
  lab.ensure_dense();
  const double moe = final_val_ppl(lab.smoe_dir());
  const double dense = final_val_ppl(lab.dense_dir());
  const double gain = (dense - moe) / dense;
  return {gain >= kTrendMargin,
          "mixture PPL " + fmt(moe) + " vs dense PPL " + fmt(dense) + ": " +
              fmt(gain * 100.0) + "% lower (needs >= " +
              fmt(kTrendMargin * 100.0) + "%)"};
}

// ---------------------------------------------------------------------------
// 5. Smaller router init std gives lower mean balance loss (majority of seeds)
// ---------------------------------------------------------------------------

Outcome check_init_std_trend(const Lab& lab) {
  const std::vector<float> stds = {0.02f, 0.04f, 0.06f};
  const std::vector<int> seeds = {42, 43, 44};
  int ordered_seeds = 0;
  std::string detail;
  for (const int seed : seeds) {
    std::vector<double> means;
    for (const float s : stds) {
      const RunConfig cfg = lab.init_std_cfg(s, seed);
      const std::string dir = lab.ws + "/" + cfg.run_id;
      lab.ensure(cfg, dir);
      double sum = 0.0;
      long long n = 0;
      for (const TrainRow& r : read_train_log(dir))
        if (r.step >= 100) {
          sum += r.balance;
          ++n;
        }
      means.push_back(sum / static_cast<double>(n));
    }
    const bool ordered = means[0] < means[1] && means[1] < means[2];
    ordered_seeds += ordered ? 1 : 0;
    detail += "seed " + std::to_string(seed) + ": " + fmt(means[0]) + " / " +
              fmt(means[1]) + " / " + fmt(means[2]) +
              (ordered ? " (increasing); " : " (NOT increasing); ");
  }
  return {ordered_seeds >= kMajoritySeeds,
          detail + std::to_string(ordered_seeds) + "/3 seeds ordered (needs " +
              std::to_string(kMajoritySeeds) + ")"};
}

// ---------------------------------------------------------------------------
// 6. Expert change rate decreases over training for every routed variant
// ---------------------------------------------------------------------------

Outcome check_ecr_decreases(const Lab& lab) {
  bool all_pass = true;
  std::string detail;
  for (const MoeVariant v : routed_variants()) {
    const std::string dir = lab.routed_run(v);
    const std::vector<int> steps = list_routing_log_steps(dir);
    const RoutingLog a = read_routing_log(routing_log_path(dir, steps[0]));
    const RoutingLog b = read_routing_log(routing_log_path(dir, steps[1]));
    const RoutingLog y = read_routing_log(
        routing_log_path(dir, steps[steps.size() - 2]));
    const RoutingLog z = read_routing_log(routing_log_path(dir, steps.back()));
    const double first = expert_change_rate(a, b).aggregate;
    const double last = expert_change_rate(y, z).aggregate;
    const bool ok = last < first;
    all_pass = all_pass && ok;
    detail += std::string(variant_name(v)) + " " + fmt(first) + "->" +
              fmt(last) + (ok ? "; " : " (NOT decreasing); ");
  }
  return {all_pass, detail + "(first vs last checkpoint pair)"};
}

// ---------------------------------------------------------------------------
// 7. Router saturation rises monotonically (one violation allowed)
// ---------------------------------------------------------------------------

Outcome check_saturation_rises(const Lab& lab) {
  lab.ensure_smoe();
  const std::string dir = lab.smoe_dir();
  const std::vector<int> steps = list_routing_log_steps(dir);
  const RoutingLog final_log =
      read_routing_log(routing_log_path(dir, steps.back()));
  const int k = lab.smoe_cfg().model.moe.top_k;
  std::vector<double> sat;
  for (const int s : steps)
    sat.push_back(
        router_saturation(read_routing_log(routing_log_path(dir, s)),
                          final_log, k)
            .aggregate);
  int violations = 0;
  for (size_t i = 0; i + 1 < sat.size(); ++i)
    if (sat[i + 1] < sat[i]) ++violations;
  const bool final_exact = sat.back() == 1.0;
  std::string series;
  for (const double v : sat) series += fmt(v) + " ";
  return {violations <= kSaturationViolations && final_exact,
          "series " + series + "(" + std::to_string(violations) +
              " violation(s), allowed " +
              std::to_string(kSaturationViolations) + "; final " +
              fmt(sat.back()) + (final_exact ? " == 1 exactly)" : " != 1)")};
}

// ---------------------------------------------------------------------------
// 8. Dropping top-ranked experts degrades evaluation PPL for every variant
// ---------------------------------------------------------------------------

Outcome check_drop_top_degrades(const Lab& lab) {
  bool all_pass = true;
  std::string detail;
  for (const MoeVariant v : routed_variants()) {
    const std::string dir = lab.routed_run(v);
    EvalOptions none, d1, d12;
    d1.perturb = PerturbMode::kDropTop1;
    d12.perturb = PerturbMode::kDropTop12;
    const double p0 = eval_final(dir, none).perplexity;
    const double p1 = eval_final(dir, d1).perplexity;
    const double p2 = eval_final(dir, d12).perplexity;
    const bool ok =
        p1 >= p0 * (1.0 - kDropSlack) && p2 >= p1 * (1.0 - kDropSlack);
    all_pass = all_pass && ok;
    detail += std::string(variant_name(v)) + " " + fmt(p0) + "/" + fmt(p1) +
              "/" + fmt(p2) + (ok ? "; " : " (NOT degrading); ");
  }
  return {all_pass, detail + "(none/drop1/drop1&2, slack " + fmt(kDropSlack) +
                        ")"};
}

// ---------------------------------------------------------------------------
// 9. High routing temperature hurts softmax variants; low barely matters
// ---------------------------------------------------------------------------

Outcome check_temperature_trend(const Lab& lab) {
  bool all_pass = true;
  std::string detail;
  for (const MoeVariant v : softmax_variants()) {
    const std::string dir = lab.routed_run(v);
    EvalOptions t1, t10, t01;
    t1.temperature = 1.0f;
    t10.temperature = 10.0f;
    t01.temperature = 0.1f;
    const double p1 = eval_final(dir, t1).perplexity;
    const double p10 = eval_final(dir, t10).perplexity;
    const double p01 = eval_final(dir, t01).perplexity;
    const bool ok =
        p10 > p1 && std::abs(p01 - p1) < std::abs(p10 - p1);
    all_pass = all_pass && ok;
    detail += std::string(variant_name(v)) + " tau1 " + fmt(p1) + ", tau10 " +
              fmt(p10) + ", tau0.1 " + fmt(p01) + (ok ? "; " : " (WRONG); ");
  }
  return {all_pass, detail + "(tau10 must exceed tau1; tau0.1 delta smaller)"};
}

// ---------------------------------------------------------------------------
// 10. Upcycled experts diverge below 0.999 similarity at every layer
// ---------------------------------------------------------------------------

Outcome check_expert_divergence(const Lab& lab) {
  lab.ensure_dense();
  lab.ensure(lab.upcycled_cfg(), lab.upcycled_dir());
  const CurveTable t = similarity_curve(lab.upcycled_dir());
  bool all_pass = true;
  std::string detail;
  for (size_t c = 0; c < t.labels.size(); ++c) {
    const double at_init = t.columns[c].front();
    const double at_end = t.columns[c].back();
    const bool ok = std::abs(at_init - 1.0) < kSimilarityInitTol &&
                    at_end < kSimilarityFinal && at_end < at_init;
    all_pass = all_pass && ok;
    detail += t.labels[c] + " " + fmt(at_init) + "->" + fmt(at_end) +
              (ok ? "; " : " (NOT diverging); ");
  }
  return {all_pass, detail + "(start within " + fmt(kSimilarityInitTol) +
                        " of 1, end below " + fmt(kSimilarityFinal) + ")"};
}

// ---------------------------------------------------------------------------
// 11. Diagnostics match independent brute-force oracles on random logs
// ---------------------------------------------------------------------------

namespace oracle {

// Straight-from-the-definition re-implementations using ordered containers;
// nothing below shares code with the library metrics.

double entropy_norm(const std::vector<double>& w) {
  double total = 0.0;
  for (const double v : w) total += v;
  double h = 0.0;
  for (const double v : w)
    if (v > 0.0) {
      const double p = v / total;
      h -= p * std::log2(p);
    }
  return h / std::log2(static_cast<double>(w.size()));
}

double eae(const RoutingLog& log, int n_routable) {
  std::vector<double> counts(static_cast<size_t>(n_routable), 0.0);
  for (const RoutingRecord& r : log.records)
    for (const int id : r.selected_ids) counts[static_cast<size_t>(id)] += 1.0;
  return entropy_norm(counts);
}

double ewa(const RoutingLog& log) {
  double sum = 0.0;
  for (const RoutingRecord& r : log.records) {
    std::vector<double> g(r.gate_weights.begin(), r.gate_weights.end());
    sum += entropy_norm(g);
  }
  return sum / static_cast<double>(log.records.size());
}

double ecr(const RoutingLog& a, const RoutingLog& b) {
  std::map<std::pair<int, int>, std::set<int>> sel;
  for (const RoutingRecord& r : a.records)
    sel[{r.layer, r.token_position}] =
        std::set<int>(r.selected_ids.begin(), r.selected_ids.end());
  double changed = 0.0;
  for (const RoutingRecord& r : b.records) {
    const std::set<int> now(r.selected_ids.begin(), r.selected_ids.end());
    if (sel.at({r.layer, r.token_position}) != now) changed += 1.0;
  }
  return changed / static_cast<double>(b.records.size());
}

double saturation(const RoutingLog& a, const RoutingLog& fin, int k) {
  std::map<std::pair<int, int>, std::vector<int>> sel;
  for (const RoutingRecord& r : a.records)
    sel[{r.layer, r.token_position}] = r.selected_ids;
  double sum = 0.0;
  for (const RoutingRecord& r : fin.records) {
    const std::vector<int>& then = sel.at({r.layer, r.token_position});
    std::set<int> s1(then.begin(), then.begin() + k);
    std::set<int> s2(r.selected_ids.begin(), r.selected_ids.begin() + k);
    std::vector<int> common;
    std::set_intersection(s1.begin(), s1.end(), s2.begin(), s2.end(),
                          std::back_inserter(common));
    sum += static_cast<double>(common.size()) / static_cast<double>(k);
  }
  return sum / static_cast<double>(fin.records.size());
}

double margin_softmax(const RoutingLog& log) {
  double sum = 0.0;
  for (const RoutingRecord& r : log.records) {
    std::vector<double> row(r.full_logits.begin(), r.full_logits.end());
    double mx = row[0];
    for (const double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      z += v;
    }
    for (double& v : row) v /= z;
    std::sort(row.begin(), row.end(), std::greater<double>());
    sum += row[0] - row[1];
  }
  return sum / static_cast<double>(log.records.size());
}

std::vector<std::vector<double>> eca(const RoutingLog& log, int n_routable) {
  const size_t n = static_cast<size_t>(n_routable);
  std::vector<std::vector<double>> joint(n, std::vector<double>(n, 0.0));
  std::vector<double> active(n, 0.0);
  for (const RoutingRecord& r : log.records) {
    for (const int i : r.selected_ids) {
      active[static_cast<size_t>(i)] += 1.0;
      for (const int j : r.selected_ids)
        joint[static_cast<size_t>(i)][static_cast<size_t>(j)] += 1.0;
    }
  }
  std::vector<std::vector<double>> out(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j)
      out[i][j] = active[i] > 0.0 ? joint[i][j] / active[i] : 0.0;
  return out;
}

}  // namespace oracle

Outcome check_metric_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  const int n = 6, k = 3, layers = 2, tokens = 40;
  double worst = 0.0;
  Rng rng(2718);
  const auto random_log = [&](int step) {
    RoutingLog log;
    log.header = {"oracle", step, layers, n, k, "smoe", "0"};
    for (int l = 0; l < layers; ++l)
      for (int t = 0; t < tokens; ++t) {
        RoutingRecord r;
        r.layer = l;
        r.token_position = t;
        std::vector<int> pool;
        for (int i = 0; i < n; ++i) pool.push_back(i);
        rng.shuffle(pool);
        r.selected_ids.assign(pool.begin(), pool.begin() + k);
        float left = 1.0f;
        for (int i = 0; i < k; ++i) {
          const float g = i + 1 == k
                              ? left
                              : left * (0.2f + 0.6f * static_cast<float>(
                                                          rng.uniform()));
          r.gate_weights.push_back(g);
          left -= g;
        }
        for (int i = 0; i < n; ++i)
          r.full_logits.push_back(
              static_cast<float>(rng.uniform() * 4.0 - 2.0));
        log.records.push_back(std::move(r));
      }
    return log;
  };

  for (int trial = 0; trial < kOracleTrials; ++trial) {
    const RoutingLog a = random_log(0);
    const RoutingLog b = random_log(100);
    const auto diff = [&](double got, double want) {
      worst = std::max(worst, std::abs(got - want));
    };
    diff(expert_allocation_entropy(a).aggregate, oracle::eae(a, n));
    diff(gate_weight_entropy(a).aggregate, oracle::ewa(a));
    diff(expert_change_rate(a, b).aggregate, oracle::ecr(a, b));
    diff(router_saturation(a, b, 2).aggregate, oracle::saturation(a, b, 2));
    diff(router_margin(a).aggregate, oracle::margin_softmax(a));
    const auto got = expert_coactivation(a).matrix;
    const auto want = oracle::eca(a, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        diff(got[static_cast<size_t>(i)][static_cast<size_t>(j)],
             want[static_cast<size_t>(i)][static_cast<size_t>(j)]);
  }
  return {worst < kOracleTol,
          "max |library - oracle| " + fmt(worst) + " over " +
              std::to_string(kOracleTrials) + " random logs (tol " +
              fmt(kOracleTol) + "), " + fmt(seconds_since(t0)) + " s"};
}

// ---------------------------------------------------------------------------
// 12. Balance-loss identities
// ---------------------------------------------------------------------------

Outcome check_balance_identities() {
  const int d = 8, t = 64;
  const float alpha = 0.01f;

  // Uniform routing: zeroed router weights give a uniform softmax P, so the
  // loss is alpha * N * sum_i f_i / N = alpha regardless of tie-breaking.
  MoeConfig uni;
  uni.variant = MoeVariant::kSmoe;
  uni.n_experts = 4;
  uni.top_k = 2;
  uni.expert_dim = 6;
  uni.balance_coef = alpha;
  Rng rng(77);
  MoeLayer uniform_layer = build_moe_layer(uni, d, rng);
  std::fill(uniform_layer.router.data(),
            uniform_layer.router.data() + uniform_layer.router.numel(), 0.0f);
  const Tensor x_uni = Tensor::randn({t, d}, rng, 1.0f);
  Tape tape_u(false);
  const double uniform_loss = static_cast<double>(
      moe_forward(tape_u, uniform_layer, x_uni).aux.balance_loss);
  const double uniform_err = std::abs(uniform_loss - alpha);

  // Single-expert collapse: a huge logit margin sends every token to expert
  // 0 with P_0 -> 1, so the loss is alpha * N.
  MoeConfig col = uni;
  col.top_k = 1;
  MoeLayer collapse_layer = build_moe_layer(col, d, rng);
  for (int row = 0; row < d; ++row)
    for (int j = 0; j < col.n_experts; ++j)
      collapse_layer.router.data()[static_cast<size_t>(row) * col.n_experts +
                                   static_cast<size_t>(j)] =
          j == 0 ? 20.0f : -20.0f;
  Tensor x_col = Tensor::randn({t, d}, rng, 1.0f);
  for (size_t i = 0; i < x_col.numel(); ++i)
    x_col.data()[i] = std::abs(x_col.data()[i]) + 0.1f;
  Tape tape_c(false);
  const double collapse_loss = static_cast<double>(
      moe_forward(tape_c, collapse_layer, x_col).aux.balance_loss);
  const double collapse_err =
      std::abs(collapse_loss - alpha * static_cast<double>(col.n_experts));

  // A run with both auxiliary coefficients at zero logs exact-zero columns.
  RunConfig zero_cfg = tiny_cfg("alpha_zero");
  zero_cfg.model.moe.balance_coef = 0.0f;
  zero_cfg.model.moe.z_coef = 0.0f;
  const std::string dir = "/tmp/moelab_acceptance_alpha_zero";
  fs::remove_all(dir);
  train(zero_cfg, dir);
  bool zero_column = true;
  for (const TrainRow& r : read_train_log(dir))
    zero_column = zero_column && r.balance == 0.0 && r.z == 0.0;
  fs::remove_all(dir);

  const bool pass = uniform_err < kBalanceTol && collapse_err < kBalanceTol &&
                    zero_column;
  return {pass, "uniform " + fmt(uniform_loss) + " (want " + fmt(alpha) +
                    ", err " + fmt(uniform_err) + "), collapse " +
                    fmt(collapse_loss) + " (want " + fmt(alpha * 4.0) +
                    ", err " + fmt(collapse_err) + "), zero-coef columns " +
                    (zero_column ? "all zero" : "NOT all zero")};
}

// ---------------------------------------------------------------------------
// 13. Bitwise determinism of training logs and checkpoints
// ---------------------------------------------------------------------------

Outcome check_determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string a = "/tmp/moelab_acceptance_det_a";
  const std::string b = "/tmp/moelab_acceptance_det_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const RunConfig cfg = tiny_cfg("det");
  train(cfg, a);
  train(cfg, b);
  const bool log_same = slurp(a + "/train_log.csv") == slurp(b + "/train_log.csv");
  const bool ckpt_same = slurp(a + "/checkpoints/step_000000.ckpt") ==
                         slurp(b + "/checkpoints/step_000000.ckpt");
  fs::remove_all(a);
  fs::remove_all(b);
  return {log_same && ckpt_same,
          std::string("10-step train log ") +
              (log_same ? "bit-identical" : "DIFFERS") +
              ", step-0 checkpoint " +
              (ckpt_same ? "bit-identical" : "DIFFERS") + ", " +
              fmt(seconds_since(t0)) + " s"};
}

}  // namespace

int main() {
  const char* env = std::getenv("MOELAB_ACCEPTANCE_DIR");
  const Lab lab(env != nullptr ? env : "acceptance_workspace");
  std::cerr << "[setup] workspace: " << lab.ws << "\n";

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "full-softmax mixture equals brute-force dense mixture",
       [&] { return check_full_mixture(); }},
      {2, "op-level and end-to-end gradients match finite differences",
       [&] { return check_gradients(); }},
      {3, "upcycled mixture reproduces dense validation PPL at step 0",
       [&] { return check_upcycle_identity(lab); }},
      {4, "mixture beats the active-parameter-matched dense baseline",
       [&] { return check_moe_beats_dense(lab); }},
      {5, "smaller router init std keeps balance loss lower",
       [&] { return check_init_std_trend(lab); }},
      {6, "expert change rate decreases over training for every variant",
       [&] { return check_ecr_decreases(lab); }},
      {7, "router saturation rises toward 1 across checkpoints",
       [&] { return check_saturation_rises(lab); }},
      {8, "dropping top-ranked experts degrades evaluation PPL",
       [&] { return check_drop_top_degrades(lab); }},
      {9, "high routing temperature hurts softmax variants most",
       [&] { return check_temperature_trend(lab); }},
      {10, "upcycled experts diverge below the similarity ceiling",
       [&] { return check_expert_divergence(lab); }},
      {11, "diagnostics match independent brute-force oracles",
       [&] { return check_metric_oracles(); }},
      {12, "balance loss hits its uniform and collapse identities",
       [&] { return check_balance_identities(); }},
      {13, "identical configs train bit-identically",
       [&] { return check_determinism(); }},
  };

  int failed = 0;
  std::vector<std::string> lines;
  for (const Criterion& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::ostringstream line;
    line << (o.pass ? "[PASS] " : "[FAIL] ") << c.id << ". " << c.name << ": "
         << o.detail;
    lines.push_back(line.str());
    std::cerr << lines.back() << "\n";  // progress while later checks train
  }

  for (const std::string& l : lines) std::cout << l << "\n";
  std::cout << (13 - failed) << "/13 criteria passed\n";
  return failed;
}
