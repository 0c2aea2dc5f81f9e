// Copyright (c) 2026 moelab authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration on top of the trainer and diagnostics:
//   - run-directory inspection (checkpoint/log discovery, CSV readback)
//   - idempotent run management (reuse a finished run whose config matches)
//   - parameter sweeps over one axis (router init std, variant, evaluation
//     temperature, routing perturbation) with merged result tables
//   - named recipes that reproduce each diagnostic study end to end and emit
//     JSON + CSV reports and SVG plots carrying the producing config hash

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "moelab/checkpoint.hpp"
#include "moelab/config.hpp"
#include "moelab/diagnostics.hpp"
#include "moelab/errors.hpp"
#include "moelab/routing_log.hpp"
#include "moelab/svg.hpp"
#include "moelab/trainer.hpp"

namespace moelab {

// ---------------------------------------------------------------------------
// Run-directory inspection
// ---------------------------------------------------------------------------

inline std::string checkpoint_path(const std::string& run_dir, int step) {
  return run_dir + "/checkpoints/step_" + detail::step_tag(step) + ".ckpt";
}

inline std::string routing_log_path(const std::string& run_dir, int step) {
  return run_dir + "/logs/routing_step_" + detail::step_tag(step) + ".jsonl.gz";
}

namespace detail {

// Steps parsed from "<prefix>NNNNNN<suffix>" filenames in one directory.
inline std::vector<int> steps_in_dir(const std::string& dir,
                                     const std::string& prefix,
                                     const std::string& suffix) {
  namespace fs = std::filesystem;
  std::vector<int> steps;
  if (!fs::is_directory(dir)) return steps;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() <= prefix.size() + suffix.size()) continue;
    if (name.rfind(prefix, 0) != 0) continue;
    if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
      continue;
    const std::string digits =
        name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
    if (digits.empty() ||
        digits.find_first_not_of("0123456789") != std::string::npos)
      continue;
    steps.push_back(std::stoi(digits));
  }
  std::sort(steps.begin(), steps.end());
  return steps;
}

inline double parse_real_field(const std::string& v, const std::string& where) {
  try {
    size_t used = 0;
    const double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw DataError(where + ": not a number: " + v);
  }
}

inline std::string slurp_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

// Rows of a comma-separated table with the given expected header.
inline std::vector<std::vector<double>> read_csv_rows(
    const std::string& path, const std::string& expected_header) {
  const std::string text = slurp_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != expected_header)
    throw DataError("unexpected header in " + path + ": " + line);
  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    for (const std::string& field : split_list(line, ','))
      row.push_back(
          parse_real_field(field, path + " line " + std::to_string(line_no)));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

inline std::vector<int> list_checkpoint_steps(const std::string& run_dir) {
  return detail::steps_in_dir(run_dir + "/checkpoints", "step_", ".ckpt");
}

inline std::vector<int> list_routing_log_steps(const std::string& run_dir) {
  return detail::steps_in_dir(run_dir + "/logs", "routing_step_", ".jsonl.gz");
}

inline RunConfig run_dir_config(const std::string& run_dir) {
  return parse_run_config(detail::slurp_file(run_dir + "/config.ini"));
}

inline std::vector<TrainRow> read_train_log(const std::string& run_dir) {
  std::vector<TrainRow> rows;
  for (const auto& r : detail::read_csv_rows(
           run_dir + "/train_log.csv",
           "step,lr,ce_loss,balance_loss,z_loss,grad_norm")) {
    if (r.size() != 6)
      throw DataError("malformed train log row in " + run_dir);
    rows.push_back({static_cast<int>(r[0]), static_cast<float>(r[1]), r[2],
                    r[3], r[4], r[5]});
  }
  return rows;
}

inline std::vector<EvalPoint> read_eval_log(const std::string& run_dir) {
  std::vector<EvalPoint> rows;
  for (const auto& r :
       detail::read_csv_rows(run_dir + "/eval_log.csv", "step,val_ppl")) {
    if (r.size() != 2) throw DataError("malformed eval log row in " + run_dir);
    rows.push_back({static_cast<int>(r[0]), r[1]});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Idempotent run management
// ---------------------------------------------------------------------------

// Trains `cfg` into `run_dir` unless a finished run with the identical config
// already lives there (then it is reused untouched). A differing existing run
// is refused without `force`. Returns true when training actually ran.
inline bool ensure_run(const RunConfig& cfg, const std::string& run_dir,
                       bool force = false) {
  namespace fs = std::filesystem;
  validate(cfg);
  if (fs::exists(run_dir + "/config.ini")) {
    const bool same_config =
        config_hash(run_dir_config(run_dir)) == config_hash(cfg);
    const bool finished =
        fs::exists(checkpoint_path(run_dir, cfg.total_steps));
    if (same_config && finished) return false;
    if (!force)
      throw ConfigError("run directory " + run_dir +
                        (same_config ? " is unfinished"
                                     : " holds a different configuration") +
                        "; pass force to retrain");
    fs::remove_all(run_dir);
  }
  train(cfg, run_dir);
  return true;
}

// Refuses to clobber an existing artifact path unless forced.
inline void require_fresh(const std::string& path, bool force) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) return;
  if (!force)
    throw ConfigError("output " + path + " already exists; pass force to overwrite");
  fs::remove_all(path);
}

// ---------------------------------------------------------------------------
// Curve tables (metric-over-steps exports)
// ---------------------------------------------------------------------------

// A named set of series sampled at common x positions, exportable as CSV
// (one column per series, config hash in a leading comment), JSON, and an
// SVG line plot.
struct CurveTable {
  std::string name;
  std::string x_label = "step";
  std::string y_label;
  std::vector<double> xs;
  std::vector<std::string> labels;            // one per column
  std::vector<std::vector<double>> columns;   // [label][x index]
  std::string config_hash;

  std::string to_csv() const {
    std::string out = "# config_hash: " + config_hash + "\n" + x_label;
    for (const std::string& l : labels) out += "," + l;
    out += "\n";
    for (size_t i = 0; i < xs.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.9g", xs[i]);
      out += buf;
      for (const auto& col : columns) {
        std::snprintf(buf, sizeof(buf), ",%.9g", col[i]);
        out += buf;
      }
      out += "\n";
    }
    return out;
  }

  ordered_json to_json() const {
    ordered_json j;
    j["name"] = name;
    j["config_hash"] = config_hash;
    j[x_label] = xs;
    ordered_json series = ordered_json::object();
    for (size_t i = 0; i < labels.size(); ++i) series[labels[i]] = columns[i];
    j["series"] = series;
    return j;
  }

  std::vector<Series> to_series() const {
    std::vector<Series> s;
    for (size_t i = 0; i < labels.size(); ++i)
      s.push_back({labels[i], xs, columns[i]});
    return s;
  }
};

// Writes table.{csv,json} under reports/ and an SVG under plots/.
inline void emit_curve(const std::string& out_dir, const CurveTable& t) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir + "/reports");
  fs::create_directories(out_dir + "/plots");
  write_text_file(out_dir + "/reports/" + t.name + ".csv", t.to_csv());
  write_text_file(out_dir + "/reports/" + t.name + ".json",
                  t.to_json().dump(2) + "\n");
  write_text_file(out_dir + "/plots/" + t.name + ".svg",
                  render_line_plot(t.name, t.x_label, t.y_label, t.to_series()));
}

inline void emit_report(const std::string& out_dir, const std::string& name,
                        const MetricReport& r) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir + "/reports");
  write_text_file(out_dir + "/reports/" + name + ".json",
                  r.to_json().dump(2) + "\n");
  std::string csv = r.to_csv();
  if (r.parameters.contains("config_hash"))
    csv = "# config_hash: " + r.parameters["config_hash"].get<std::string>() +
          "\n" + csv;
  write_text_file(out_dir + "/reports/" + name + ".csv", csv);
}

// ---------------------------------------------------------------------------
// Metric curves over one run's routing logs
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::pair<int, RoutingLog>> load_run_logs(
    const std::string& run_dir) {
  std::vector<std::pair<int, RoutingLog>> logs;
  for (const int step : list_routing_log_steps(run_dir))
    logs.emplace_back(step, read_routing_log(routing_log_path(run_dir, step)));
  if (logs.size() < 2)
    throw DataError("run " + run_dir + " holds " +
                    std::to_string(logs.size()) +
                    " routing logs; metric curves need at least 2");
  return logs;
}

// Builds a per-layer curve table out of a metric evaluated on each log.
template <typename F>
inline CurveTable per_layer_curve(const std::string& name,
                                  const std::string& y_label,
                                  const std::string& hash,
                                  const std::vector<std::pair<int, RoutingLog>>& logs,
                                  F&& metric) {
  CurveTable t;
  t.name = name;
  t.y_label = y_label;
  t.config_hash = hash;
  for (size_t i = 0; i < logs.size(); ++i) {
    const PerLayerValues v = metric(logs[i].second);
    if (t.labels.empty()) {
      for (const int l : v.layers)
        t.labels.push_back("layer" + std::to_string(l));
      t.labels.push_back("aggregate");
      t.columns.assign(t.labels.size(), {});
    }
    t.xs.push_back(static_cast<double>(logs[i].first));
    for (size_t c = 0; c < v.values.size(); ++c)
      t.columns[c].push_back(v.values[c]);
    t.columns.back().push_back(v.aggregate);
  }
  return t;
}

}  // namespace detail

// Expert change rate between consecutive checkpoints' logs (x = later step).
inline CurveTable ecr_curve(const std::string& run_dir) {
  const auto logs = detail::load_run_logs(run_dir);
  const std::string hash = config_hash(run_dir_config(run_dir));
  CurveTable t;
  t.name = "ecr_curve";
  t.y_label = "expert change rate";
  t.config_hash = hash;
  for (size_t i = 0; i + 1 < logs.size(); ++i) {
    const PerLayerValues v =
        expert_change_rate(logs[i].second, logs[i + 1].second);
    if (t.labels.empty()) {
      for (const int l : v.layers) t.labels.push_back("layer" + std::to_string(l));
      t.labels.push_back("aggregate");
      t.columns.assign(t.labels.size(), {});
    }
    t.xs.push_back(static_cast<double>(logs[i + 1].first));
    for (size_t c = 0; c < v.values.size(); ++c)
      t.columns[c].push_back(v.values[c]);
    t.columns.back().push_back(v.aggregate);
  }
  return t;
}

// Top-1 and top-K overlap with the final checkpoint's selections.
inline CurveTable saturation_curve(const std::string& run_dir) {
  const auto logs = detail::load_run_logs(run_dir);
  const RunConfig cfg = run_dir_config(run_dir);
  const int k = cfg.model.moe.top_k;
  const RoutingLog& final_log = logs.back().second;
  CurveTable t;
  t.name = "saturation_curve";
  t.y_label = "overlap with final";
  t.config_hash = config_hash(cfg);
  t.labels = {"top1"};
  if (k > 1) t.labels.push_back("top" + std::to_string(k));
  t.columns.assign(t.labels.size(), {});
  for (const auto& [step, log] : logs) {
    t.xs.push_back(static_cast<double>(step));
    t.columns[0].push_back(router_saturation(log, final_log, 1).aggregate);
    if (k > 1)
      t.columns[1].push_back(router_saturation(log, final_log, k).aggregate);
  }
  return t;
}

inline CurveTable eae_curve(const std::string& run_dir) {
  const auto logs = detail::load_run_logs(run_dir);
  return detail::per_layer_curve("eae_curve", "allocation entropy",
                                 config_hash(run_dir_config(run_dir)), logs,
                                 [](const RoutingLog& l) {
                                   return expert_allocation_entropy(l);
                                 });
}

inline CurveTable ewa_curve(const std::string& run_dir) {
  const auto logs = detail::load_run_logs(run_dir);
  return detail::per_layer_curve("ewa_curve", "gate weight entropy",
                                 config_hash(run_dir_config(run_dir)), logs,
                                 [](const RoutingLog& l) {
                                   return gate_weight_entropy(l);
                                 });
}

inline CurveTable margin_curve(const std::string& run_dir) {
  const auto logs = detail::load_run_logs(run_dir);
  return detail::per_layer_curve("margin_curve", "router margin",
                                 config_hash(run_dir_config(run_dir)), logs,
                                 [](const RoutingLog& l) {
                                   return router_margin(l);
                                 });
}

// Mean pairwise expert similarity per MoE layer at every checkpoint.
inline CurveTable similarity_curve(const std::string& run_dir) {
  const RunConfig cfg = run_dir_config(run_dir);
  const std::vector<int> steps = list_checkpoint_steps(run_dir);
  if (steps.size() < 2)
    throw DataError("run " + run_dir + " holds fewer than 2 checkpoints");
  CurveTable t;
  t.name = "similarity_curve";
  t.y_label = "mean pairwise cosine";
  t.config_hash = config_hash(cfg);
  for (const int step : steps) {
    const Model m =
        model_from_checkpoint(load_checkpoint(checkpoint_path(run_dir, step)));
    t.xs.push_back(static_cast<double>(step));
    size_t col = 0;
    for (int l = 0; l < cfg.model.n_layers; ++l) {
      if (!is_moe_layer(cfg.model, l)) continue;
      if (t.labels.size() <= col) {
        t.labels.push_back("layer" + std::to_string(l));
        t.columns.emplace_back();
      }
      t.columns[col].push_back(
          expert_similarity(m.blocks[static_cast<size_t>(l)].moe)
              .mean_off_diagonal);
      ++col;
    }
  }
  if (t.labels.empty())
    throw ConfigError("run " + run_dir + " has no layers with routed experts");
  return t;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

enum class SweepAxis { kInitStd, kTemperature, kVariant, kPerturbation };

inline const char* sweep_axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::kInitStd: return "init_std";
    case SweepAxis::kTemperature: return "temperature";
    case SweepAxis::kVariant: return "variant";
    case SweepAxis::kPerturbation: return "perturbation";
  }
  return "init_std";
}

inline SweepAxis sweep_axis_from_name(const std::string& s) {
  if (s == "init_std") return SweepAxis::kInitStd;
  if (s == "temperature") return SweepAxis::kTemperature;
  if (s == "variant") return SweepAxis::kVariant;
  if (s == "perturbation") return SweepAxis::kPerturbation;
  throw ConfigError("unknown sweep axis: " + s);
}

// Whether the axis varies training runs (vs evaluation of one trained run).
inline bool sweep_axis_trains(SweepAxis a) {
  return a == SweepAxis::kInitStd || a == SweepAxis::kVariant;
}

struct SweepSpec {
  RunConfig base;
  SweepAxis axis = SweepAxis::kInitStd;
  std::vector<std::string> values;
};

// Sweep spec file: the base run configuration plus a [sweep] section with
// `axis` and a comma-separated `values` list.
inline SweepSpec parse_sweep_spec(const std::string& text) {
  auto sections = detail::parse_ini_sections(text);
  const auto it = sections.find("sweep");
  if (it == sections.end())
    throw ConfigError("sweep spec is missing the [sweep] section");
  SweepSpec spec;
  std::string axis, values;
  for (const auto& [key, value] : it->second) {
    if (key == "axis")
      axis = value;
    else if (key == "values")
      values = value;
    else
      throw ConfigError("unknown config key: sweep." + key);
  }
  if (axis.empty()) throw ConfigError("sweep spec is missing sweep.axis");
  spec.axis = sweep_axis_from_name(axis);
  spec.values = detail::split_list(values, ',');
  if (spec.values.empty()) throw ConfigError("sweep spec has no values");
  sections.erase(it);
  std::string base_text;
  for (const auto& [section, keys] : sections) {
    base_text += "[" + section + "]\n";
    for (const auto& [key, value] : keys)
      base_text += key + " = " + value + "\n";
  }
  spec.base = parse_run_config(base_text);
  return spec;
}

namespace detail {

inline float parse_positive_real(const std::string& v, const std::string& what) {
  double r = 0.0;
  try {
    r = parse_real_field(v, what);
  } catch (const DataError&) {
    throw ConfigError(what + ": not a number: " + v);
  }
  if (!(r > 0.0)) throw ConfigError(what + " must be positive: " + v);
  return static_cast<float>(r);
}

}  // namespace detail

// Applies one swept value to the base config (training axes only).
inline RunConfig apply_axis_value(RunConfig cfg, SweepAxis axis,
                                  const std::string& value) {
  switch (axis) {
    case SweepAxis::kInitStd:
      cfg.model.moe.router_init_std =
          detail::parse_positive_real(value, "sweep value init_std");
      break;
    case SweepAxis::kVariant: {
      const MoeVariant v = variant_from_name(value);
      cfg.model.moe.variant = v;
      cfg.model.moe.n_shared =
          has_shared(v) ? std::max(1, cfg.model.moe.n_shared) : 0;
      break;
    }
    case SweepAxis::kTemperature:
    case SweepAxis::kPerturbation:
      break;  // evaluation-time axes leave training untouched
  }
  cfg.run_id += std::string("_") + sweep_axis_name(axis) + "_" + value;
  return cfg;
}

struct SweepResult {
  SweepAxis axis = SweepAxis::kInitStd;
  std::vector<std::string> values;
  std::vector<std::string> run_dirs;  // one per value (training axes) or one
  std::string merged_csv_path;
  ordered_json summary;
};

// Runs the sweep under `out_dir`: one training run per value for training
// axes, or one base run re-evaluated per value for evaluation axes. Emits
// merged.csv, merged.svg, and sweep.json.
inline SweepResult run_sweep(const SweepSpec& spec, const std::string& out_dir,
                             bool force = false) {
  namespace fs = std::filesystem;
  if (spec.values.empty()) throw ConfigError("sweep has no values");
  fs::create_directories(out_dir);
  require_fresh(out_dir + "/sweep.json", force);

  SweepResult result;
  result.axis = spec.axis;
  result.values = spec.values;
  result.summary = ordered_json::object();
  result.summary["axis"] = sweep_axis_name(spec.axis);
  ordered_json per_value = ordered_json::object();

  CurveTable merged;
  merged.name = "merged";
  merged.config_hash = config_hash(spec.base);

  if (sweep_axis_trains(spec.axis)) {
    std::vector<std::vector<TrainRow>> rows_per_value;
    std::vector<std::vector<EvalPoint>> evals_per_value;
    for (const std::string& value : spec.values) {
      const RunConfig cfg = apply_axis_value(spec.base, spec.axis, value);
      const std::string dir =
          out_dir + "/run_" + sweep_axis_name(spec.axis) + "_" + value;
      ensure_run(cfg, dir, force);
      result.run_dirs.push_back(dir);
      rows_per_value.push_back(read_train_log(dir));
      evals_per_value.push_back(read_eval_log(dir));
      ordered_json v;
      v["run_dir"] = dir;
      v["config_hash"] = config_hash(cfg);
      v["final_val_ppl"] = evals_per_value.back().back().val_ppl;
      per_value[value] = v;
    }
    if (spec.axis == SweepAxis::kInitStd) {
      // Per-step balance-loss curves, one column per std value, plus the
      // mean over steps 100..end in the summary.
      merged.y_label = "balance loss";
      for (const TrainRow& r : rows_per_value[0])
        merged.xs.push_back(static_cast<double>(r.step));
      for (size_t i = 0; i < spec.values.size(); ++i) {
        merged.labels.push_back("std_" + spec.values[i]);
        std::vector<double> col;
        double tail_sum = 0.0;
        long long tail_n = 0;
        for (const TrainRow& r : rows_per_value[i]) {
          col.push_back(r.balance);
          if (r.step >= 100) {
            tail_sum += r.balance;
            ++tail_n;
          }
        }
        if (col.size() != merged.xs.size())
          throw DataError("sweep runs logged differing step counts");
        merged.columns.push_back(std::move(col));
        per_value[spec.values[i]]["balance_mean_from_step_100"] =
            tail_n > 0 ? tail_sum / static_cast<double>(tail_n) : 0.0;
      }
    } else {
      // Validation perplexity curves, one column per variant.
      merged.y_label = "validation perplexity";
      for (const EvalPoint& e : evals_per_value[0])
        merged.xs.push_back(static_cast<double>(e.step));
      for (size_t i = 0; i < spec.values.size(); ++i) {
        merged.labels.push_back(spec.values[i]);
        std::vector<double> col;
        for (const EvalPoint& e : evals_per_value[i]) col.push_back(e.val_ppl);
        if (col.size() != merged.xs.size())
          throw DataError("sweep runs logged differing eval counts");
        merged.columns.push_back(std::move(col));
      }
    }
  } else {
    // Evaluation axes: one base training run, one evaluation per value.
    const std::string dir = out_dir + "/run_base";
    ensure_run(spec.base, dir, force);
    result.run_dirs.push_back(dir);
    const Model model = model_from_checkpoint(
        load_checkpoint(checkpoint_path(dir, spec.base.total_steps)));
    const Corpus corpus = corpus_for(spec.base);
    double ppl_at_tau1 = 0.0;
    std::vector<double> ppls;
    for (const std::string& value : spec.values) {
      EvalOptions eo;
      if (spec.axis == SweepAxis::kTemperature)
        eo.temperature =
            detail::parse_positive_real(value, "sweep value temperature");
      else
        eo.perturb = perturb_from_name(value);
      const EvalResult ev =
          evaluate(model, corpus.val_tokens, spec.base.batch_size, eo);
      ppls.push_back(ev.perplexity);
      if (spec.axis == SweepAxis::kTemperature && eo.temperature == 1.0f)
        ppl_at_tau1 = ev.perplexity;
      ordered_json v;
      v["val_ppl"] = ev.perplexity;
      per_value[value] = v;
    }
    if (ppl_at_tau1 > 0.0)
      for (size_t i = 0; i < spec.values.size(); ++i)
        per_value[spec.values[i]]["delta_vs_tau1"] = ppls[i] - ppl_at_tau1;
    merged.y_label = "validation perplexity";
    merged.x_label = sweep_axis_name(spec.axis);
    merged.labels = {"val_ppl"};
    merged.columns.emplace_back();
    for (size_t i = 0; i < spec.values.size(); ++i) {
      // Numeric x when possible (temperature), index otherwise.
      merged.xs.push_back(spec.axis == SweepAxis::kTemperature
                              ? static_cast<double>(detail::parse_positive_real(
                                    spec.values[i], "sweep value"))
                              : static_cast<double>(i));
      merged.columns[0].push_back(ppls[i]);
    }
  }

  result.summary["values"] = per_value;
  write_text_file(out_dir + "/merged.csv", merged.to_csv());
  write_text_file(out_dir + "/merged.svg",
                  render_line_plot("sweep over " +
                                       std::string(sweep_axis_name(spec.axis)),
                                   merged.x_label, merged.y_label,
                                   merged.to_series()));
  write_text_file(out_dir + "/sweep.json", result.summary.dump(2) + "\n");
  result.merged_csv_path = out_dir + "/merged.csv";
  return result;
}

// ---------------------------------------------------------------------------
// Recipes
// ---------------------------------------------------------------------------

namespace detail {

// Trains (or reuses) the base run for log-curve recipes.
inline std::string recipe_base_run(const RunConfig& base,
                                   const std::string& out_dir, bool force) {
  const std::string dir = out_dir + "/run";
  ensure_run(base, dir, force);
  return dir;
}

inline void emit_summary(const std::string& out_dir, const std::string& name,
                         const ordered_json& summary) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir + "/reports");
  write_text_file(out_dir + "/reports/" + name + "_summary.json",
                  summary.dump(2) + "\n");
}

}  // namespace detail

inline const std::vector<std::string>& recipe_names() {
  static const std::vector<std::string> kNames = {
      "ecr-curve",  "drop-top",   "eae",     "ewa",
      "margin",     "similarity", "init-std", "eca",
      "saturation", "temperature", "aux-loss"};
  return kNames;
}

// Runs one named diagnostic study end to end under `out_dir` and returns its
// summary (also written to reports/<name>_summary.json).
inline ordered_json run_recipe(const std::string& name, const RunConfig& base,
                               const std::string& out_dir, bool force = false) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  ordered_json summary;
  summary["recipe"] = name;
  summary["config_hash"] = config_hash(base);

  const auto curve_recipe = [&](CurveTable (*fn)(const std::string&)) {
    const std::string run = detail::recipe_base_run(base, out_dir, force);
    const CurveTable t = fn(run);
    emit_curve(out_dir, t);
    summary["run_dir"] = run;
    summary["table"] = t.to_json();
  };

  if (name == "ecr-curve") {
    curve_recipe(&ecr_curve);
  } else if (name == "saturation") {
    curve_recipe(&saturation_curve);
  } else if (name == "eae") {
    curve_recipe(&eae_curve);
  } else if (name == "ewa") {
    curve_recipe(&ewa_curve);
  } else if (name == "margin") {
    curve_recipe(&margin_curve);
  } else if (name == "similarity") {
    // Track expert divergence from an upcycled start: train a dense twin
    // first when the base config does not already name a dense checkpoint.
    RunConfig moe = base;
    if (moe.init_mode == InitMode::kScratch) {
      RunConfig dense = base;
      dense.run_id += "_dense";
      dense.model.moe.variant = MoeVariant::kDense;
      dense.model.moe.n_shared = 0;
      const std::string dense_dir = out_dir + "/dense";
      ensure_run(dense, dense_dir, force);
      moe.init_mode = InitMode::kUpcycleFull;
      moe.dense_checkpoint = checkpoint_path(dense_dir, dense.total_steps);
      summary["dense_run_dir"] = dense_dir;
    }
    const std::string run = out_dir + "/run";
    ensure_run(moe, run, force);
    const CurveTable t = similarity_curve(run);
    emit_curve(out_dir, t);
    summary["run_dir"] = run;
    summary["table"] = t.to_json();
  } else if (name == "eca") {
    const std::string run = detail::recipe_base_run(base, out_dir, force);
    const std::vector<int> steps = list_routing_log_steps(run);
    if (steps.empty()) throw DataError("run holds no routing logs");
    const RoutingLog log =
        read_routing_log(routing_log_path(run, steps.back()));
    const CoactivationResult eca = expert_coactivation(log);
    ordered_json params;
    params["config_hash"] = config_hash(base);
    params["step"] = steps.back();
    MetricReport report =
        make_matrix_report("coactivation", eca.matrix, {steps.back()}, params);
    emit_report(out_dir, "eca", report);
    fs::create_directories(out_dir + "/plots");
    write_text_file(out_dir + "/plots/eca.svg",
                    render_heatmap("expert co-activation", report.labels,
                                   eca.matrix));
    summary["run_dir"] = run;
    summary["matrix"] = eca.matrix;
    summary["inactive_experts"] = eca.inactive;
  } else if (name == "init-std") {
    SweepSpec spec;
    spec.base = base;
    spec.base.model.moe.variant = MoeVariant::kSmoe;
    spec.base.model.moe.n_shared = 0;
    spec.axis = SweepAxis::kInitStd;
    spec.values = {"0.02", "0.04", "0.06"};
    const SweepResult r = run_sweep(spec, out_dir, force);
    summary["sweep"] = r.summary;
  } else if (name == "temperature") {
    SweepSpec spec;
    spec.base = base;
    spec.axis = SweepAxis::kTemperature;
    spec.values = {"0.1", "1.0", "10.0"};
    const SweepResult r = run_sweep(spec, out_dir, force);
    summary["sweep"] = r.summary;
  } else if (name == "drop-top") {
    SweepSpec spec;
    spec.base = base;
    spec.axis = SweepAxis::kPerturbation;
    spec.values = {"none", "drop_top1", "drop_top1_2"};
    const SweepResult r = run_sweep(spec, out_dir, force);
    summary["sweep"] = r.summary;
  } else if (name == "aux-loss") {
    // Ablate the two auxiliary losses separately against the base setting.
    struct Arm {
      const char* label;
      float balance;
      float z;
    };
    const float base_balance =
        base.model.moe.balance_coef > 0.0f ? base.model.moe.balance_coef : 0.01f;
    const float base_z = base.model.moe.z_coef > 0.0f ? base.model.moe.z_coef
                                                      : 1e-3f;
    const std::vector<Arm> arms = {{"full", base_balance, base_z},
                                   {"no_balance", 0.0f, base_z},
                                   {"no_z", base_balance, 0.0f}};
    CurveTable ce, bal;
    ce.name = "aux_loss_ce";
    ce.y_label = "train cross-entropy";
    ce.config_hash = config_hash(base);
    bal.name = "aux_loss_balance";
    bal.y_label = "balance loss";
    bal.config_hash = ce.config_hash;
    ordered_json per_arm = ordered_json::object();
    for (const Arm& arm : arms) {
      RunConfig cfg = base;
      cfg.run_id += std::string("_") + arm.label;
      cfg.model.moe.balance_coef = arm.balance;
      cfg.model.moe.z_coef = arm.z;
      const std::string dir = out_dir + std::string("/run_") + arm.label;
      ensure_run(cfg, dir, force);
      const std::vector<TrainRow> rows = read_train_log(dir);
      if (ce.xs.empty())
        for (const TrainRow& r : rows)
          ce.xs.push_back(static_cast<double>(r.step));
      bal.xs = ce.xs;
      ce.labels.push_back(arm.label);
      bal.labels.push_back(arm.label);
      std::vector<double> ce_col, bal_col;
      for (const TrainRow& r : rows) {
        ce_col.push_back(r.ce);
        bal_col.push_back(r.balance);
      }
      ce.columns.push_back(std::move(ce_col));
      bal.columns.push_back(std::move(bal_col));
      ordered_json a;
      a["run_dir"] = dir;
      a["config_hash"] = config_hash(cfg);
      a["final_val_ppl"] = read_eval_log(dir).back().val_ppl;
      per_arm[arm.label] = a;
    }
    emit_curve(out_dir, ce);
    emit_curve(out_dir, bal);
    summary["arms"] = per_arm;
  } else {
    throw ConfigError("unknown recipe: " + name);
  }

  detail::emit_summary(out_dir, name, summary);
  return summary;
}

// ---------------------------------------------------------------------------
// Full-run report bundle
// ---------------------------------------------------------------------------

// Bundles every applicable table and plot for one finished run directory:
// loss/perplexity curves always; routing-metric curves, the final
// co-activation heatmap, and the similarity curve when the run has routed
// layers. Artifacts land in <run>/reports and <run>/plots.
inline ordered_json report_run(const std::string& run_dir, bool force = false) {
  namespace fs = std::filesystem;
  const RunConfig cfg = run_dir_config(run_dir);
  const std::string hash = config_hash(cfg);
  require_fresh(run_dir + "/reports", force);
  require_fresh(run_dir + "/plots", force);

  ordered_json summary;
  summary["run_dir"] = run_dir;
  summary["config_hash"] = hash;

  // Training curves.
  const std::vector<TrainRow> rows = read_train_log(run_dir);
  CurveTable loss;
  loss.name = "train_loss";
  loss.y_label = "loss";
  loss.config_hash = hash;
  loss.labels = {"cross_entropy", "balance", "z"};
  loss.columns.assign(3, {});
  for (const TrainRow& r : rows) {
    loss.xs.push_back(static_cast<double>(r.step));
    loss.columns[0].push_back(r.ce);
    loss.columns[1].push_back(r.balance);
    loss.columns[2].push_back(r.z);
  }
  emit_curve(run_dir, loss);

  const std::vector<EvalPoint> evals = read_eval_log(run_dir);
  CurveTable ppl;
  ppl.name = "val_ppl";
  ppl.y_label = "validation perplexity";
  ppl.config_hash = hash;
  ppl.labels = {"val_ppl"};
  ppl.columns.assign(1, {});
  for (const EvalPoint& e : evals) {
    ppl.xs.push_back(static_cast<double>(e.step));
    ppl.columns[0].push_back(e.val_ppl);
  }
  emit_curve(run_dir, ppl);
  summary["final_val_ppl"] = evals.back().val_ppl;

  // Routing diagnostics, when the run routes at all.
  const std::vector<int> log_steps = list_routing_log_steps(run_dir);
  if (log_steps.size() >= 2) {
    emit_curve(run_dir, ecr_curve(run_dir));
    emit_curve(run_dir, saturation_curve(run_dir));
    emit_curve(run_dir, eae_curve(run_dir));
    emit_curve(run_dir, ewa_curve(run_dir));
    emit_curve(run_dir, margin_curve(run_dir));
    if (cfg.model.moe.n_experts >= 2)
      emit_curve(run_dir, similarity_curve(run_dir));

    const RoutingLog final_log =
        read_routing_log(routing_log_path(run_dir, log_steps.back()));
    const CoactivationResult eca = expert_coactivation(final_log);
    ordered_json params;
    params["config_hash"] = hash;
    params["step"] = log_steps.back();
    const MetricReport report = make_matrix_report("coactivation", eca.matrix,
                                                   {log_steps.back()}, params);
    emit_report(run_dir, "eca", report);
    write_text_file(
        run_dir + "/plots/eca.svg",
        render_heatmap("expert co-activation", report.labels, eca.matrix));
    summary["routing_metrics"] = true;
  } else {
    summary["routing_metrics"] = false;
  }

  write_text_file(run_dir + "/reports/report_summary.json",
                  summary.dump(2) + "\n");
  return summary;
}

}  // namespace moelab
