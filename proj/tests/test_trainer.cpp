// Copyright (c) 2026 moelab authors
// SPDX-License-Identifier: Apache-2.0
//
// Trainer and evaluator tests: run-directory layout, log and checkpoint
// cadence, bitwise determinism, loss bookkeeping, upcycled initialization,
// and evaluation options (temperature override, perturbation, window caps).

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "moelab/config.hpp"
#include "moelab/data.hpp"
#include "moelab/errors.hpp"
#include "moelab/model.hpp"
#include "moelab/routing_log.hpp"
#include "moelab/trainer.hpp"

using namespace moelab;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_train_config(MoeVariant variant) {
  RunConfig cfg;
  cfg.run_id = "tiny";
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
  cfg.model.vocab_size = 256;
  cfg.model.seq_len = 8;
  cfg.model.moe.variant = variant;
  cfg.model.moe.n_experts = 4;
  cfg.model.moe.top_k = 2;
  cfg.model.moe.expert_dim = 6;
  cfg.model.moe.xmoe_routing_dim = 4;
  if (has_shared(variant)) cfg.model.moe.n_shared = 1;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

// Scoped run directory under /tmp, removed on destruction.
struct RunDir {
  std::string path;
  explicit RunDir(const std::string& name) : path("/tmp/" + name) {
    fs::remove_all(path);
  }
  ~RunDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("a short run produces logs, checkpoints, and finite metrics",
          "[trainer][smoke]") {
  RunDir dir("moelab_test_run_smoke");
  const RunConfig cfg = tiny_train_config(MoeVariant::kSmoe);
  const TrainResult res = train(cfg, dir.path);

  REQUIRE(res.rows.size() == 10);
  REQUIRE(res.evals.size() == 3);  // steps 0, 5, 10
  REQUIRE(res.evals[0].step == 0);
  REQUIRE(res.evals[2].step == 10);
  REQUIRE(res.config_hash == config_hash(cfg));
  for (const TrainRow& r : res.rows) {
    REQUIRE(std::isfinite(r.ce));
    REQUIRE(r.ce > 0.0);
    REQUIRE(std::isfinite(r.balance));
    REQUIRE(r.balance >= 0.0);
    REQUIRE(std::isfinite(r.grad_norm));
    REQUIRE(r.lr >= 0.0f);
  }
  REQUIRE(res.rows[0].lr == 0.0f);       // warmup ramp starts at zero
  REQUIRE(res.rows[5].lr > 0.0f);
  REQUIRE(res.final_val_ppl > 1.0);
  REQUIRE(std::isfinite(res.final_val_ppl));

  // Directory layout.
  REQUIRE(slurp(dir.path + "/config.ini") == serialize_run_config(cfg));
  const std::string train_log = slurp(dir.path + "/train_log.csv");
  REQUIRE(count_lines(train_log) == 11);  // header + 10 rows
  REQUIRE(train_log.rfind("step,lr,ce_loss,balance_loss,z_loss,grad_norm\n",
                          0) == 0);
  const std::string eval_log = slurp(dir.path + "/eval_log.csv");
  REQUIRE(count_lines(eval_log) == 4);  // header + 3 rows
  REQUIRE(eval_log.rfind("step,val_ppl\n", 0) == 0);
  for (const char* tag : {"000000", "000005", "000010"}) {
    REQUIRE(fs::exists(dir.path + "/checkpoints/step_" + tag + ".ckpt"));
    REQUIRE(fs::exists(dir.path + "/logs/routing_step_" + tag + ".jsonl.gz"));
  }
  REQUIRE_FALSE(fs::exists(dir.path + "/checkpoints/diverged.ckpt"));

  // Routing logs carry the run provenance and consistent keys across steps.
  const RoutingLog first =
      read_routing_log(dir.path + "/logs/routing_step_000000.jsonl.gz");
  const RoutingLog last =
      read_routing_log(dir.path + "/logs/routing_step_000010.jsonl.gz");
  REQUIRE(first.header.run_id == "tiny");
  REQUIRE(first.header.step == 0);
  REQUIRE(last.header.step == 10);
  REQUIRE(first.header.variant == "smoe");
  REQUIRE(first.header.n_layers == 2);
  REQUIRE(first.header.n_routable == 4);
  REQUIRE(first.header.top_k == 2);
  REQUIRE(first.header.config_hash == res.config_hash);
  REQUIRE(!first.records.empty());
  REQUIRE(first.records.size() == last.records.size());
  for (size_t i = 0; i < first.records.size(); ++i) {
    REQUIRE(first.records[i].layer == last.records[i].layer);
    REQUIRE(first.records[i].token_position == last.records[i].token_position);
    REQUIRE(first.records[i].selected_ids.size() == 2);
    REQUIRE(first.records[i].full_logits.size() == 4);
  }
}

TEST_CASE("training is bitwise deterministic", "[trainer][determinism]") {
  RunDir a("moelab_test_run_det_a"), b("moelab_test_run_det_b");
  const RunConfig cfg = tiny_train_config(MoeVariant::kSigmaMoe);
  const TrainResult ra = train(cfg, a.path);
  const TrainResult rb = train(cfg, b.path);
  REQUIRE(slurp(a.path + "/train_log.csv") == slurp(b.path + "/train_log.csv"));
  REQUIRE(slurp(a.path + "/eval_log.csv") == slurp(b.path + "/eval_log.csv"));
  REQUIRE(slurp(a.path + "/checkpoints/step_000010.ckpt") ==
          slurp(b.path + "/checkpoints/step_000010.ckpt"));
  REQUIRE(ra.final_val_ppl == rb.final_val_ppl);
}

TEST_CASE("auxiliary loss columns are exactly zero when disabled",
          "[trainer][balance]") {
  RunDir dir("moelab_test_run_nobal");
  RunConfig cfg = tiny_train_config(MoeVariant::kSmoe);
  cfg.model.moe.balance_coef = 0.0f;
  cfg.model.moe.z_coef = 0.0f;
  const TrainResult res = train(cfg, dir.path);
  for (const TrainRow& r : res.rows) {
    REQUIRE(r.balance == 0.0);
    REQUIRE(r.z == 0.0);
  }
}

TEST_CASE("upcycled runs start at the dense model's perplexity",
          "[trainer][upcycle]") {
  RunDir dense_dir("moelab_test_run_dense");
  RunConfig dense_cfg = tiny_train_config(MoeVariant::kDense);
  dense_cfg.total_steps = 4;
  dense_cfg.checkpoint_every = 2;
  dense_cfg.eval_every = 2;
  const TrainResult dense_res = train(dense_cfg, dense_dir.path);
  const double dense_final_ppl = dense_res.evals.back().val_ppl;
  const std::string dense_ckpt =
      dense_dir.path + "/checkpoints/step_000004.ckpt";
  REQUIRE(fs::exists(dense_ckpt));

  RunDir moe_dir("moelab_test_run_upcycled");
  RunConfig moe_cfg = tiny_train_config(MoeVariant::kSmoe);
  moe_cfg.init_mode = InitMode::kUpcycleFull;
  moe_cfg.dense_checkpoint = dense_ckpt;
  moe_cfg.model.moe.expert_dim = dense_cfg.model.moe.expert_dim;
  const TrainResult moe_res = train(moe_cfg, moe_dir.path);

  // All experts start as copies of the dense FFN and the top-k gates sum to
  // one, so the step-0 evaluation matches the dense model up to rounding.
  const double up_ppl = moe_res.evals[0].val_ppl;
  REQUIRE(std::abs(up_ppl - dense_final_ppl) / dense_final_ppl < 1e-3);
  // Training then moves away from the seeded point.
  REQUIRE(moe_res.rows.size() == 10);

  // shared-expert-only seeding demands a variant with shared experts.
  RunDir bad_dir("moelab_test_run_badup");
  RunConfig bad = moe_cfg;
  bad.init_mode = InitMode::kUpcycleSharedOnly;
  REQUIRE_THROWS_AS(train(bad, bad_dir.path), ConfigError);
}

TEST_CASE("a fresh model scores near the uniform-distribution perplexity",
          "[trainer][evaluate]") {
  const RunConfig cfg = tiny_train_config(MoeVariant::kSmoe);
  Model m = build_model(cfg.model, 11);
  Rng rng(99);
  std::vector<int32_t> tokens(1200);
  for (int32_t& t : tokens) t = static_cast<int32_t>(rng.next_below(256));
  const EvalResult ev = evaluate(m, tokens, 4);
  REQUIRE(ev.tokens > 1000);
  REQUIRE(ev.perplexity > 256.0 * 0.95);
  REQUIRE(ev.perplexity < 256.0 * 1.05);
}

TEST_CASE("evaluation options behave as documented", "[trainer][evaluate]") {
  const RunConfig cfg = tiny_train_config(MoeVariant::kSmoe);
  Model m = build_model(cfg.model, 5);
  const std::string text = synth_corpus(2000, 17);
  const std::vector<int32_t> tokens = tokenize_bytes(text);

  const EvalResult base = evaluate(m, tokens, 4);

  SECTION("temperature one is a bitwise no-op") {
    EvalOptions eo;
    eo.temperature = 1.0f;
    REQUIRE(evaluate(m, tokens, 4).mean_ce == base.mean_ce);
    REQUIRE(evaluate(m, tokens, 4, eo).mean_ce == base.mean_ce);
  }

  SECTION("a large temperature changes the score") {
    EvalOptions eo;
    eo.temperature = 10.0f;
    REQUIRE(evaluate(m, tokens, 4, eo).mean_ce != base.mean_ce);
    // The caller's model keeps its own temperature.
    REQUIRE(m.cfg.moe.temperature == 1.0f);
  }

  SECTION("routing perturbation changes the score") {
    EvalOptions eo;
    eo.perturb = PerturbMode::kDropTop1;
    REQUIRE(evaluate(m, tokens, 4, eo).mean_ce != base.mean_ce);
  }

  SECTION("window cap limits scored tokens") {
    EvalOptions eo;
    eo.max_windows = 3;
    const EvalResult ev = evaluate(m, tokens, 4, eo);
    REQUIRE(ev.tokens == 3 * cfg.model.seq_len);
  }

  SECTION("captured records cover every routed layer and token") {
    std::vector<RoutingRecord> records;
    EvalOptions eo;
    eo.records = &records;
    eo.max_windows = 4;
    const EvalResult ev = evaluate(m, tokens, 4, eo);
    REQUIRE(records.size() ==
            static_cast<size_t>(ev.tokens) * cfg.model.n_layers);
    // Token positions are globally consecutive per layer across batches.
    std::vector<int> layer0_positions;
    for (const RoutingRecord& r : records)
      if (r.layer == 0) layer0_positions.push_back(r.token_position);
    for (size_t i = 0; i < layer0_positions.size(); ++i)
      REQUIRE(layer0_positions[i] == static_cast<int>(i));
  }

  SECTION("batch size must be positive") {
    REQUIRE_THROWS_AS(evaluate(m, tokens, 0), ConfigError);
  }
}
