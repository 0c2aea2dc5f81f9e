// Copyright (c) 2026 moelab authors
// SPDX-License-Identifier: Apache-2.0
//
// Training and evaluation drivers. `train` runs the full loop described by a
// RunConfig inside a run directory (config copy, checkpoints/, logs/, CSV
// logs, routing logs at every evaluation); `evaluate` scores a model over a
// token stream with optional routing perturbation, temperature override, and
// routing-record capture.

#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "moelab/checkpoint.hpp"
#include "moelab/config.hpp"
#include "moelab/data.hpp"
#include "moelab/errors.hpp"
#include "moelab/model.hpp"
#include "moelab/optim.hpp"
#include "moelab/routing_log.hpp"
#include "moelab/tensor.hpp"

namespace moelab {

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalOptions {
  PerturbMode perturb = PerturbMode::kNone;
  float temperature = 0.0f;  // > 0 replaces the model's routing temperature
  std::vector<RoutingRecord>* records = nullptr;  // optional routing capture
  int max_windows = 0;                            // 0 = every window
};

struct EvalResult {
  double mean_ce = 0.0;     // token-weighted mean cross-entropy, nats
  double perplexity = 0.0;  // exp(mean_ce)
  long long tokens = 0;     // number of scored target tokens
};

// Scores `tokens` with non-overlapping windows of the model's context length
// (plus one tail window). Takes the model by value: the config copy lets a
// temperature override apply without touching the caller's model, while the
// weight tensors stay shared.
inline EvalResult evaluate(Model model, const std::vector<int32_t>& tokens,
                           int batch_size, const EvalOptions& opts = {}) {
  if (batch_size <= 0) throw ConfigError("evaluate: batch_size must be positive");
  if (opts.temperature > 0.0f) {
    // Each block's FFN sublayer holds its own config copy, so the override
    // must reach all of them, not just the model-level config.
    model.cfg.moe.temperature = opts.temperature;
    for (Block& b : model.blocks) b.moe.cfg.temperature = opts.temperature;
  }
  const int t = model.cfg.seq_len;
  std::vector<size_t> starts = sequential_starts(tokens.size(), t);
  if (opts.max_windows > 0 &&
      starts.size() > static_cast<size_t>(opts.max_windows))
    starts.resize(static_cast<size_t>(opts.max_windows));

  Tape tape(false);
  double ce_sum = 0.0;
  long long n_tokens = 0;
  for (size_t from = 0; from < starts.size(); from += static_cast<size_t>(batch_size)) {
    const int count = static_cast<int>(
        std::min<size_t>(static_cast<size_t>(batch_size), starts.size() - from));
    const Batch b = window_batch(tokens, starts, from, count, t);
    LmForwardOptions fo;
    fo.perturb = opts.perturb;
    fo.records = opts.records;
    fo.token_offset = static_cast<int>(n_tokens);
    const LmForwardResult out = forward_lm(tape, model, b.inputs, count, t, fo);
    const double ce = tape.cross_entropy_mean(out.logits, b.targets).item();
    const long long n = static_cast<long long>(count) * t;
    ce_sum += ce * static_cast<double>(n);
    n_tokens += n;
  }

  EvalResult r;
  r.tokens = n_tokens;
  r.mean_ce = n_tokens > 0 ? ce_sum / static_cast<double>(n_tokens) : 0.0;
  r.perplexity = std::exp(r.mean_ce);
  return r;
}

// The corpus a run configuration describes: named files, or the seeded
// synthetic corpus when no files are listed.
inline Corpus corpus_for(const RunConfig& cfg) {
  return cfg.corpus_files.empty()
             ? split_corpus(
                   tokenize_bytes(synth_corpus(cfg.synth_bytes, cfg.synth_seed)),
                   cfg.val_fraction)
             : load_corpus(cfg.corpus_files, cfg.val_fraction);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainRow {
  int step = 0;
  float lr = 0.0f;
  double ce = 0.0;
  double balance = 0.0;
  double z = 0.0;
  double grad_norm = 0.0;  // pre-clip global gradient norm
};

struct EvalPoint {
  int step = 0;
  double val_ppl = 0.0;
};

struct TrainResult {
  std::vector<TrainRow> rows;     // one per optimizer step
  std::vector<EvalPoint> evals;   // one per evaluation boundary
  double final_val_ppl = 0.0;
  std::string run_dir;
  std::string config_hash;
};

namespace detail {

inline std::string step_tag(int step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d", step);
  return buf;
}

inline std::ofstream open_csv(const std::string& path, const std::string& header) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write log: " + path);
  out << header << "\n";
  return out;
}

// Layers whose FFN sublayer carries a router (dense models have none).
inline int count_routed_layers(const ModelConfig& cfg) {
  int n = 0;
  for (int l = 0; l < cfg.n_layers; ++l)
    if (is_moe_layer(cfg, l)) ++n;
  return n;
}

}  // namespace detail

// Runs the configured training loop inside `run_dir`, creating:
//   config.ini                     canonical copy of the run configuration
//   train_log.csv                  step,lr,ce_loss,balance_loss,z_loss,grad_norm
//   eval_log.csv                   step,val_ppl
//   checkpoints/step_NNNNNN.ckpt   at step 0, every checkpoint_every, and at the end
//   logs/routing_step_NNNNNN.jsonl.gz  routing decisions at every evaluation
// A non-finite loss or gradient aborts with a diagnostic checkpoint and
// logs/error.json before the exception propagates.
inline TrainResult train(const RunConfig& cfg, const std::string& run_dir) {
  validate(cfg);
  namespace fs = std::filesystem;
  fs::create_directories(run_dir + "/checkpoints");
  fs::create_directories(run_dir + "/logs");
  {
    std::ofstream out(run_dir + "/config.ini", std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write config copy in " + run_dir);
    out << serialize_run_config(cfg);
  }

  const Corpus corpus = corpus_for(cfg);

  Model model = build_model(cfg.model, cfg.seed);
  if (cfg.init_mode != InitMode::kScratch) {
    const Model dense = model_from_checkpoint(load_checkpoint(cfg.dense_checkpoint));
    upcycle_model(model, dense,
                  cfg.init_mode == InitMode::kUpcycleFull
                      ? UpcycleMode::kFull
                      : UpcycleMode::kSharedOnly);
  }
  std::vector<NamedParam> params = collect_params(model);
  AdamWState opt_state;

  // Decorrelate batch order from weight initialization.
  BatchStream stream(corpus.train_tokens, cfg.model.seq_len, cfg.batch_size,
                     cfg.seed ^ 0x646174616f726472ull);

  std::ofstream train_csv = detail::open_csv(
      run_dir + "/train_log.csv", "step,lr,ce_loss,balance_loss,z_loss,grad_norm");
  std::ofstream eval_csv =
      detail::open_csv(run_dir + "/eval_log.csv", "step,val_ppl");

  TrainResult result;
  result.run_dir = run_dir;
  result.config_hash = config_hash(cfg);

  const int routed_layers = detail::count_routed_layers(cfg.model);

  const auto run_eval = [&](int step) {
    std::vector<RoutingRecord> records;
    EvalOptions eo;
    const bool capture = cfg.log_routing_on_eval && routed_layers > 0;
    if (capture) eo.records = &records;
    const EvalResult ev = evaluate(model, corpus.val_tokens, cfg.batch_size, eo);
    eval_csv << step << "," << detail::fmt_real(ev.perplexity) << "\n";
    eval_csv.flush();
    result.evals.push_back({step, ev.perplexity});
    result.final_val_ppl = ev.perplexity;
    if (capture) {
      RoutingLogHeader h;
      h.run_id = cfg.run_id;
      h.step = step;
      h.n_layers = routed_layers;
      h.n_routable = n_routable(cfg.model.moe);
      h.top_k = cfg.model.moe.top_k;
      h.variant = variant_name(cfg.model.moe.variant);
      h.config_hash = result.config_hash;
      write_routing_log(
          run_dir + "/logs/routing_step_" + detail::step_tag(step) + ".jsonl.gz",
          h, records);
    }
  };

  const auto abort_diverged = [&](int step, const std::string& what) {
    save_checkpoint(params, step, cfg, run_dir + "/checkpoints/diverged.ckpt");
    ordered_json err;
    err["step"] = step;
    err["error"] = what;
    std::ofstream out(run_dir + "/logs/error.json",
                      std::ios::binary | std::ios::trunc);
    out << err.dump(2) << "\n";
    throw DataError("training diverged at step " + std::to_string(step) + ": " +
                    what);
  };

  for (int step = 0; step <= cfg.total_steps; ++step) {
    if (step % cfg.checkpoint_every == 0 || step == cfg.total_steps)
      save_checkpoint(params, step, cfg,
                      run_dir + "/checkpoints/step_" + detail::step_tag(step) +
                          ".ckpt");
    if (step % cfg.eval_every == 0 || step == cfg.total_steps) run_eval(step);
    if (step == cfg.total_steps) break;

    const Batch b = stream.next();
    Tape tape;
    const LmForwardResult out = forward_lm(tape, model, b.inputs, b.batch, b.seq);
    const Tensor ce = tape.cross_entropy_mean(out.logits, b.targets);
    const Tensor loss = tape.add(tape.add(ce, out.balance), out.z);

    TrainRow row;
    row.step = step;
    row.ce = ce.item();
    row.balance = out.balance.item();
    row.z = out.z.item();
    if (!std::isfinite(row.ce) || !std::isfinite(row.balance) ||
        !std::isfinite(row.z))
      abort_diverged(step, "non-finite loss (ce " + std::to_string(row.ce) +
                               ", balance " + std::to_string(row.balance) +
                               ", z " + std::to_string(row.z) + ")");

    tape.backward(loss);
    row.grad_norm = clip_grad_norm(params, cfg.grad_clip);
    if (!std::isfinite(row.grad_norm))
      abort_diverged(step, "non-finite gradient norm");
    row.lr = cosine_lr(step, cfg.total_steps, cfg.warmup_steps, cfg.lr);

    AdamWConfig oc;
    oc.lr = row.lr;
    oc.weight_decay = cfg.weight_decay;
    try {
      adamw_step(params, opt_state, oc);
    } catch (const DataError& e) {
      abort_diverged(step, e.what());
    }
    for (NamedParam& p : params) p.tensor.zero_grad();

    train_csv << row.step << "," << detail::fmt_real(row.lr) << ","
              << detail::fmt_real(row.ce) << "," << detail::fmt_real(row.balance)
              << "," << detail::fmt_real(row.z) << ","
              << detail::fmt_real(row.grad_norm) << "\n";
    train_csv.flush();
    result.rows.push_back(row);
  }

  return result;
}

}  // namespace moelab
