// Copyright (c) 2026 moelab authors
// SPDX-License-Identifier: Apache-2.0
//
// moelab command-line driver.
//
// Subcommands:
//   train      train a run from a config file into a run directory
//   eval       score a checkpoint on its validation split (JSON to stdout)
//   perturb    eval under a routing perturbation (alias for eval --perturb)
//   diagnose   compute one routing metric from logs or a checkpoint
//   sweep      run a one-axis parameter sweep from a sweep spec file
//   recipe     reproduce one named diagnostic study end to end
//   report     bundle every table and plot for a finished run
//   gen-corpus write a deterministic synthetic byte corpus
//
// Exit codes: 0 success, 1 runtime failure (JSON error record on stderr),
// 2 usage error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "moelab/checkpoint.hpp"
#include "moelab/config.hpp"
#include "moelab/data.hpp"
#include "moelab/diagnostics.hpp"
#include "moelab/errors.hpp"
#include "moelab/experiments.hpp"
#include "moelab/routing_log.hpp"
#include "moelab/svg.hpp"
#include "moelab/trainer.hpp"

namespace {

using namespace moelab;

// Argument combinations that parse but make no sense (wrong log count for a
// metric, missing checkpoint). Reported as usage errors, exit code 2.
struct UsageError {
  std::string message;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void print_json(const ordered_json& j) { std::cout << j.dump(2) << "\n"; }

RunConfig config_from_file(const std::string& path,
                           const std::vector<std::string>& overrides) {
  return parse_run_config(apply_overrides(slurp(path), overrides));
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const DataError*>(&e)) return "data";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const ManifestError*>(&e)) return "manifest";
  if (dynamic_cast<const AlignmentError*>(&e)) return "alignment";
  if (dynamic_cast<const TapeError*>(&e)) return "tape";
  return "runtime";
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config, out;
  std::vector<std::string> sets;
  bool force = false;
};

void cmd_train(const TrainArgs& a) {
  const RunConfig cfg = config_from_file(a.config, a.sets);
  const bool trained = ensure_run(cfg, a.out, a.force);
  ordered_json j;
  j["run_dir"] = a.out;
  j["config_hash"] = config_hash(cfg);
  j["trained"] = trained;
  j["reused"] = !trained;
  j["final_val_ppl"] = read_eval_log(a.out).back().val_ppl;
  print_json(j);
}

// --- eval / perturb ---------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  double temperature = 0.0;  // 0 keeps the checkpoint's temperature
  std::string perturb = "none";
  int batch_size = 0;  // 0 uses the checkpoint's training batch size
  int max_windows = 0;
};

void cmd_eval(const EvalArgs& a) {
  const LoadedCheckpoint ck = load_checkpoint(a.ckpt);
  const Model model = model_from_checkpoint(ck);
  const Corpus corpus = corpus_for(ck.run_config);
  EvalOptions opts;
  opts.perturb = perturb_from_name(a.perturb);
  opts.temperature = static_cast<float>(a.temperature);
  opts.max_windows = a.max_windows;
  const int batch = a.batch_size > 0 ? a.batch_size : ck.run_config.batch_size;
  const EvalResult r = evaluate(model, corpus.val_tokens, batch, opts);
  ordered_json j;
  j["checkpoint"] = a.ckpt;
  j["step"] = ck.step;
  j["config_hash"] = config_hash(ck.run_config);
  j["temperature"] = a.temperature > 0.0
                         ? a.temperature
                         : static_cast<double>(ck.run_config.model.moe.temperature);
  j["perturb"] = a.perturb;
  j["mean_ce"] = r.mean_ce;
  j["val_ppl"] = r.perplexity;
  j["tokens"] = r.tokens;
  print_json(j);
}

// --- diagnose ---------------------------------------------------------------

struct DiagnoseArgs {
  std::string metric;
  std::vector<std::string> logs;
  std::string ckpt;
  std::string out;
  int k = 0;  // saturation depth; 0 uses the log's top_k
  bool fractional = false;
};

void require_logs(const DiagnoseArgs& a, size_t n) {
  if (a.logs.size() != n)
    throw UsageError{"--metric " + a.metric + " needs exactly " +
                     std::to_string(n) + " --logs file(s), got " +
                     std::to_string(a.logs.size())};
}

MetricReport diagnose_report(const DiagnoseArgs& a) {
  ordered_json params;
  if (a.metric == "eae" || a.metric == "ewa" || a.metric == "margin") {
    require_logs(a, 1);
    const RoutingLog log = read_routing_log(a.logs[0]);
    const PerLayerValues v = a.metric == "eae"   ? expert_allocation_entropy(log)
                             : a.metric == "ewa" ? gate_weight_entropy(log)
                                                 : router_margin(log);
    params["config_hash"] = log.header.config_hash;
    return make_layer_report(a.metric, v, {log.header.step}, params);
  }
  if (a.metric == "ecr") {
    require_logs(a, 2);
    const RoutingLog first = read_routing_log(a.logs[0]);
    const RoutingLog second = read_routing_log(a.logs[1]);
    const PerLayerValues v = expert_change_rate(first, second, a.fractional);
    params["config_hash"] = first.header.config_hash;
    params["fractional"] = a.fractional;
    return make_layer_report("ecr", v, {first.header.step, second.header.step},
                             params);
  }
  if (a.metric == "saturation") {
    require_logs(a, 2);
    const RoutingLog log = read_routing_log(a.logs[0]);
    const RoutingLog final_log = read_routing_log(a.logs[1]);
    const int k = a.k > 0 ? a.k : log.header.top_k;
    const PerLayerValues v = router_saturation(log, final_log, k);
    params["config_hash"] = log.header.config_hash;
    params["k"] = k;
    return make_layer_report("saturation", v,
                             {log.header.step, final_log.header.step}, params);
  }
  if (a.metric == "eca") {
    require_logs(a, 1);
    const RoutingLog log = read_routing_log(a.logs[0]);
    const CoactivationResult r = expert_coactivation(log);
    params["config_hash"] = log.header.config_hash;
    params["inactive_experts"] = r.inactive;
    return make_matrix_report("eca", r.matrix, {log.header.step}, params);
  }
  if (a.metric == "similarity") {
    if (a.ckpt.empty())
      throw UsageError{"--metric similarity needs --ckpt"};
    const LoadedCheckpoint ck = load_checkpoint(a.ckpt);
    const Model model = model_from_checkpoint(ck);
    PerLayerValues v;
    double sum = 0.0;
    for (int l = 0; l < ck.run_config.model.n_layers; ++l) {
      if (!is_moe_layer(ck.run_config.model, l)) continue;
      const double s =
          expert_similarity(model.blocks[static_cast<size_t>(l)].moe)
              .mean_off_diagonal;
      v.layers.push_back(l);
      v.values.push_back(s);
      sum += s;
    }
    if (v.layers.empty())
      throw ConfigError("checkpoint has no layers with routed experts");
    v.aggregate = sum / static_cast<double>(v.layers.size());
    params["config_hash"] = config_hash(ck.run_config);
    return make_layer_report("similarity", v, {ck.step}, params);
  }
  throw UsageError{"unknown metric: " + a.metric};
}

void cmd_diagnose(const DiagnoseArgs& a) {
  const MetricReport report = diagnose_report(a);
  const ordered_json j = report.to_json();
  if (!a.out.empty()) write_text_file(a.out, j.dump(2) + "\n");
  print_json(j);
}

// --- sweep / recipe / report / gen-corpus -----------------------------------

void cmd_sweep(const std::string& spec_path, const std::string& out,
               bool force) {
  const SweepSpec spec = parse_sweep_spec(slurp(spec_path));
  const SweepResult r = run_sweep(spec, out, force);
  ordered_json j = r.summary;
  j["out_dir"] = out;
  j["merged_csv"] = r.merged_csv_path;
  print_json(j);
}

void cmd_recipe(const std::string& name, const std::string& config,
                const std::vector<std::string>& sets, const std::string& out,
                bool force) {
  const RunConfig base = config_from_file(config, sets);
  print_json(run_recipe(name, base, out, force));
}

void cmd_gen_corpus(long long bytes, long long seed, const std::string& out) {
  const std::string data =
      synth_corpus(static_cast<size_t>(bytes), static_cast<uint64_t>(seed));
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write file: " + out);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw DataError("short write on file: " + out);
  ordered_json j;
  j["path"] = out;
  j["bytes"] = data.size();
  j["seed"] = seed;
  print_json(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moelab: a desk-scale sparse mixture-of-experts laboratory"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "Train a run from a config file");
  train->add_option("--config", train_args.config, "Run config file (INI)")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--out", train_args.out, "Run directory")->required();
  train->add_option("--set", train_args.sets,
                    "Override a config key (section.key=value), repeatable");
  train->add_flag("--force", train_args.force,
                  "Retrain even if the directory holds a different run");

  EvalArgs eval_args;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Score a checkpoint on its validation split");
  eval_cmd->add_option("--ckpt", eval_args.ckpt, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--temperature", eval_args.temperature,
                       "Routing temperature override (0 keeps trained value)")
      ->check(CLI::NonNegativeNumber);
  eval_cmd->add_option("--perturb", eval_args.perturb, "Routing perturbation")
      ->check(CLI::IsMember({"none", "drop_top1", "drop_top1_2"}));
  eval_cmd->add_option("--batch-size", eval_args.batch_size,
                       "Evaluation batch size (0 uses the training value)");
  eval_cmd->add_option("--max-windows", eval_args.max_windows,
                       "Cap on evaluation windows (0 = all)");

  EvalArgs perturb_args;
  CLI::App* perturb_cmd = app.add_subcommand(
      "perturb", "Score a checkpoint under a routing perturbation");
  perturb_cmd->add_option("--ckpt", perturb_args.ckpt, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  perturb_cmd->add_option("--mode", perturb_args.perturb, "Perturbation mode")
      ->required()
      ->check(CLI::IsMember({"none", "drop_top1", "drop_top1_2"}));
  perturb_cmd->add_option("--batch-size", perturb_args.batch_size,
                          "Evaluation batch size (0 uses the training value)");
  perturb_cmd->add_option("--max-windows", perturb_args.max_windows,
                          "Cap on evaluation windows (0 = all)");

  DiagnoseArgs diag_args;
  CLI::App* diag = app.add_subcommand(
      "diagnose", "Compute one routing metric from logs or a checkpoint");
  diag->add_option("--metric", diag_args.metric, "Metric name")
      ->required()
      ->check(CLI::IsMember({"eae", "ewa", "ecr", "saturation", "margin",
                             "eca", "similarity"}));
  diag->add_option("--logs", diag_args.logs,
                   "Routing log file(s); comma-separated or repeated")
      ->delimiter(',');
  diag->add_option("--ckpt", diag_args.ckpt,
                   "Checkpoint file (similarity metric)");
  diag->add_option("--k", diag_args.k,
                   "Saturation depth (0 uses the log's top_k)");
  diag->add_flag("--fractional", diag_args.fractional,
                 "Fractional expert change rate (1 - overlap/K)");
  diag->add_option("--out", diag_args.out, "Also write the JSON report here");

  std::string sweep_spec, sweep_out;
  bool sweep_force = false;
  CLI::App* sweep =
      app.add_subcommand("sweep", "Run a one-axis sweep from a spec file");
  sweep->add_option("--spec", sweep_spec, "Sweep spec file (INI + [sweep])")
      ->required()
      ->check(CLI::ExistingFile);
  sweep->add_option("--out", sweep_out, "Output directory")->required();
  sweep->add_flag("--force", sweep_force, "Overwrite existing sweep outputs");

  std::string recipe_name, recipe_config, recipe_out;
  std::vector<std::string> recipe_sets;
  bool recipe_force = false;
  CLI::App* recipe = app.add_subcommand(
      "recipe", "Reproduce one named diagnostic study end to end");
  recipe->add_option("name", recipe_name, "Recipe name")
      ->required()
      ->check(CLI::IsMember(recipe_names()));
  recipe->add_option("--config", recipe_config, "Base run config file (INI)")
      ->required()
      ->check(CLI::ExistingFile);
  recipe->add_option("--set", recipe_sets,
                     "Override a config key (section.key=value), repeatable");
  recipe->add_option("--out", recipe_out, "Output directory")->required();
  recipe->add_flag("--force", recipe_force, "Overwrite existing outputs");

  std::string report_run_dir;
  bool report_force = false;
  CLI::App* report =
      app.add_subcommand("report", "Bundle tables and plots for a run");
  report->add_option("--run", report_run_dir, "Finished run directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  report->add_flag("--force", report_force, "Overwrite existing reports/plots");

  long long corpus_bytes = 2000000, corpus_seed = 7;
  std::string corpus_out;
  CLI::App* gen =
      app.add_subcommand("gen-corpus", "Write a synthetic byte corpus");
  gen->add_option("--bytes", corpus_bytes, "Corpus size in bytes")
      ->check(CLI::PositiveNumber);
  gen->add_option("--seed", corpus_seed, "Generator seed");
  gen->add_option("--out", corpus_out, "Output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    app.exit(e);
    return 2;
  }

  try {
    if (*train) cmd_train(train_args);
    if (*eval_cmd) cmd_eval(eval_args);
    if (*perturb_cmd) cmd_eval(perturb_args);
    if (*diag) cmd_diagnose(diag_args);
    if (*sweep) cmd_sweep(sweep_spec, sweep_out, sweep_force);
    if (*recipe)
      cmd_recipe(recipe_name, recipe_config, recipe_sets, recipe_out,
                 recipe_force);
    if (*report) print_json(report_run(report_run_dir, report_force));
    if (*gen) cmd_gen_corpus(corpus_bytes, corpus_seed, corpus_out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.message << "\n";
    return 2;
  } catch (const std::exception& e) {
    moelab::ordered_json err;
    err["error"] = e.what();
    err["kind"] = error_kind(e);
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
