// Copyright (c) 2026 moelab authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: the full description of one training run (model,
// optimizer schedule, data source, checkpoint cadence), a flat INI-style
// parser for it, a canonical serializer (the stored config copy and the
// provenance hash are derived from it), and JSON conversion for checkpoint
// manifests.

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "moelab/errors.hpp"
#include "moelab/model.hpp"

namespace moelab {

using ordered_json = nlohmann::ordered_json;

enum class InitMode { kScratch, kUpcycleFull, kUpcycleSharedOnly };

inline const char* init_mode_name(InitMode m) {
  switch (m) {
    case InitMode::kScratch: return "scratch";
    case InitMode::kUpcycleFull: return "upcycle_full";
    case InitMode::kUpcycleSharedOnly: return "upcycle_shared_only";
  }
  return "scratch";
}

inline InitMode init_mode_from_name(const std::string& s) {
  if (s == "scratch") return InitMode::kScratch;
  if (s == "upcycle_full") return InitMode::kUpcycleFull;
  if (s == "upcycle_shared_only") return InitMode::kUpcycleSharedOnly;
  throw ConfigError("unknown init_mode: " + s);
}

struct RunConfig {
  std::string run_id = "run";
  ModelConfig model;
  float lr = 2.5e-4f;
  int warmup_steps = 100;
  int total_steps = 3000;
  int batch_size = 16;
  float grad_clip = 0.1f;
  float weight_decay = 0.01f;
  uint64_t seed = 42;
  int checkpoint_every = 300;
  int eval_every = 300;
  bool log_routing_on_eval = true;
  InitMode init_mode = InitMode::kScratch;
  std::string dense_checkpoint;  // required for upcycle init modes

  // Data source: explicit corpus files, or a seeded synthetic corpus when
  // the list is empty.
  std::vector<std::string> corpus_files;
  uint64_t synth_bytes = 2000000;
  uint64_t synth_seed = 7;
  double val_fraction = 0.005;
};

inline void validate(const RunConfig& cfg) {
  validate(cfg.model);
  if (cfg.total_steps <= 0 || cfg.batch_size <= 0)
    throw ConfigError("total_steps and batch_size must be positive");
  if (cfg.warmup_steps < 0 || cfg.warmup_steps > cfg.total_steps)
    throw ConfigError("warmup_steps must lie in [0, total_steps]");
  if (cfg.checkpoint_every <= 0 || cfg.total_steps % cfg.checkpoint_every != 0)
    throw ConfigError("checkpoint_every (" +
                      std::to_string(cfg.checkpoint_every) +
                      ") must divide total_steps (" +
                      std::to_string(cfg.total_steps) + ")");
  if (cfg.eval_every <= 0)
    throw ConfigError("eval_every must be positive");
  if (cfg.init_mode != InitMode::kScratch && cfg.dense_checkpoint.empty())
    throw ConfigError("init_mode " +
                      std::string(init_mode_name(cfg.init_mode)) +
                      " requires dense_checkpoint");
  if (!(cfg.val_fraction > 0.0) || !(cfg.val_fraction < 1.0))
    throw ConfigError("val_fraction must lie in (0, 1)");
  if (cfg.corpus_files.empty() && cfg.synth_bytes == 0)
    throw ConfigError("no corpus files and synth_bytes is zero");
  if (cfg.run_id.empty()) throw ConfigError("run_id must be non-empty");
}

// ---------------------------------------------------------------------------
// INI-style text format: [section] headers, key = value lines, '#' comments.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

// Typed access over parsed sections with unknown-key detection.
class KvReader {
 public:
  explicit KvReader(std::map<std::string, std::map<std::string, std::string>> kv)
      : kv_(std::move(kv)) {}

  bool has(const std::string& sec, const std::string& key) const {
    auto s = kv_.find(sec);
    return s != kv_.end() && s->second.count(key) > 0;
  }

  std::string str(const std::string& sec, const std::string& key,
                  const std::string& fallback) {
    auto s = kv_.find(sec);
    if (s == kv_.end()) return fallback;
    auto it = s->second.find(key);
    if (it == s->second.end()) return fallback;
    used_.insert(sec + "." + key);
    return it->second;
  }

  long long integer(const std::string& sec, const std::string& key,
                    long long fallback) {
    if (!has(sec, key)) return fallback;
    const std::string v = str(sec, key, "");
    try {
      size_t used = 0;
      const long long r = std::stoll(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return r;
    } catch (const std::exception&) {
      throw ConfigError("key " + sec + "." + key + ": not an integer: " + v);
    }
  }

  double real(const std::string& sec, const std::string& key,
              double fallback) {
    if (!has(sec, key)) return fallback;
    const std::string v = str(sec, key, "");
    try {
      size_t used = 0;
      const double r = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return r;
    } catch (const std::exception&) {
      throw ConfigError("key " + sec + "." + key + ": not a number: " + v);
    }
  }

  bool boolean(const std::string& sec, const std::string& key, bool fallback) {
    if (!has(sec, key)) return fallback;
    const std::string v = str(sec, key, "");
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key " + sec + "." + key + ": not a boolean: " + v);
  }

  // Every stored key must have been consumed by a typed getter.
  void check_all_used() const {
    for (const auto& [sec, keys] : kv_)
      for (const auto& [key, value] : keys)
        if (used_.count(sec + "." + key) == 0)
          throw ConfigError("unknown config key: " + sec + "." + key);
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> kv_;
  std::set<std::string> used_;
};

inline std::map<std::string, std::map<std::string, std::string>>
parse_ini_sections(const std::string& text) {
  std::map<std::string, std::map<std::string, std::string>> kv;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": empty key");
    if (section.empty())
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": key outside any [section]");
    kv[section][key] = value;
  }
  return kv;
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
  detail::KvReader r(detail::parse_ini_sections(text));
  RunConfig cfg;

  cfg.run_id = r.str("run", "run_id", cfg.run_id);
  cfg.lr = static_cast<float>(r.real("run", "lr", cfg.lr));
  cfg.warmup_steps =
      static_cast<int>(r.integer("run", "warmup_steps", cfg.warmup_steps));
  cfg.total_steps =
      static_cast<int>(r.integer("run", "total_steps", cfg.total_steps));
  cfg.batch_size =
      static_cast<int>(r.integer("run", "batch_size", cfg.batch_size));
  cfg.grad_clip = static_cast<float>(r.real("run", "grad_clip", cfg.grad_clip));
  cfg.weight_decay =
      static_cast<float>(r.real("run", "weight_decay", cfg.weight_decay));
  cfg.seed = static_cast<uint64_t>(
      r.integer("run", "seed", static_cast<long long>(cfg.seed)));
  cfg.checkpoint_every = static_cast<int>(
      r.integer("run", "checkpoint_every", cfg.checkpoint_every));
  cfg.eval_every =
      static_cast<int>(r.integer("run", "eval_every", cfg.eval_every));
  cfg.log_routing_on_eval =
      r.boolean("run", "log_routing_on_eval", cfg.log_routing_on_eval);
  cfg.init_mode = init_mode_from_name(
      r.str("run", "init_mode", init_mode_name(cfg.init_mode)));
  cfg.dense_checkpoint =
      r.str("run", "dense_checkpoint", cfg.dense_checkpoint);

  cfg.corpus_files = detail::split_list(r.str("data", "corpus", ""), ';');
  cfg.synth_bytes = static_cast<uint64_t>(
      r.integer("data", "synth_bytes", static_cast<long long>(cfg.synth_bytes)));
  cfg.synth_seed = static_cast<uint64_t>(
      r.integer("data", "synth_seed", static_cast<long long>(cfg.synth_seed)));
  cfg.val_fraction = r.real("data", "val_fraction", cfg.val_fraction);

  ModelConfig& m = cfg.model;
  m.d_model = static_cast<int>(r.integer("model", "d_model", m.d_model));
  m.n_heads = static_cast<int>(r.integer("model", "n_heads", m.n_heads));
  m.d_head = static_cast<int>(r.integer("model", "d_head", m.d_head));
  m.n_layers = static_cast<int>(r.integer("model", "n_layers", m.n_layers));
  m.vocab_size =
      static_cast<int>(r.integer("model", "vocab_size", m.vocab_size));
  m.seq_len = static_cast<int>(r.integer("model", "seq_len", m.seq_len));
  const std::string layers = r.str("model", "moe_layers", "all");
  m.moe_layer_indices.clear();
  if (layers != "all")
    for (const std::string& tok : detail::split_list(layers, ','))
      try {
        m.moe_layer_indices.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw ConfigError("key model.moe_layers: not a layer index: " + tok);
      }

  MoeConfig& moe = m.moe;
  moe.variant = variant_from_name(
      r.str("moe", "variant", variant_name(moe.variant)));
  moe.n_experts =
      static_cast<int>(r.integer("moe", "n_experts", moe.n_experts));
  moe.top_k = static_cast<int>(r.integer("moe", "top_k", moe.top_k));
  moe.n_shared = static_cast<int>(r.integer("moe", "n_shared", moe.n_shared));
  moe.expert_dim =
      static_cast<int>(r.integer("moe", "expert_dim", moe.expert_dim));
  moe.xmoe_routing_dim = static_cast<int>(
      r.integer("moe", "xmoe_routing_dim", moe.xmoe_routing_dim));
  moe.n_zero_experts = static_cast<int>(
      r.integer("moe", "n_zero_experts", moe.n_zero_experts));
  moe.router_init_std =
      static_cast<float>(r.real("moe", "router_init_std", moe.router_init_std));
  moe.balance_coef =
      static_cast<float>(r.real("moe", "balance_coef", moe.balance_coef));
  moe.z_coef = static_cast<float>(r.real("moe", "z_coef", moe.z_coef));
  moe.temperature =
      static_cast<float>(r.real("moe", "temperature", moe.temperature));

  // Shared-expert variants default to one shared expert if unspecified.
  if (has_shared(moe.variant) && moe.n_shared == 0 &&
      !r.has("moe", "n_shared"))
    moe.n_shared = 1;

  r.check_all_used();
  validate(cfg);
  return cfg;
}

namespace detail {
inline std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}
}  // namespace detail

// Canonical text form: fixed key order, so equal configs serialize to equal
// bytes (the provenance hash is over this text).
inline std::string serialize_run_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "[run]\n";
  out << "run_id = " << cfg.run_id << "\n";
  out << "lr = " << detail::fmt_real(cfg.lr) << "\n";
  out << "warmup_steps = " << cfg.warmup_steps << "\n";
  out << "total_steps = " << cfg.total_steps << "\n";
  out << "batch_size = " << cfg.batch_size << "\n";
  out << "grad_clip = " << detail::fmt_real(cfg.grad_clip) << "\n";
  out << "weight_decay = " << detail::fmt_real(cfg.weight_decay) << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "checkpoint_every = " << cfg.checkpoint_every << "\n";
  out << "eval_every = " << cfg.eval_every << "\n";
  out << "log_routing_on_eval = "
      << (cfg.log_routing_on_eval ? "true" : "false") << "\n";
  out << "init_mode = " << init_mode_name(cfg.init_mode) << "\n";
  if (!cfg.dense_checkpoint.empty())
    out << "dense_checkpoint = " << cfg.dense_checkpoint << "\n";
  out << "\n[data]\n";
  if (!cfg.corpus_files.empty()) {
    out << "corpus = ";
    for (size_t i = 0; i < cfg.corpus_files.size(); ++i)
      out << (i ? ";" : "") << cfg.corpus_files[i];
    out << "\n";
  }
  out << "synth_bytes = " << cfg.synth_bytes << "\n";
  out << "synth_seed = " << cfg.synth_seed << "\n";
  out << "val_fraction = " << detail::fmt_real(cfg.val_fraction) << "\n";
  const ModelConfig& m = cfg.model;
  out << "\n[model]\n";
  out << "d_model = " << m.d_model << "\n";
  out << "n_heads = " << m.n_heads << "\n";
  out << "d_head = " << m.d_head << "\n";
  out << "n_layers = " << m.n_layers << "\n";
  out << "vocab_size = " << m.vocab_size << "\n";
  out << "seq_len = " << m.seq_len << "\n";
  out << "moe_layers = ";
  if (m.moe_layer_indices.empty()) {
    out << "all";
  } else {
    for (size_t i = 0; i < m.moe_layer_indices.size(); ++i)
      out << (i ? "," : "") << m.moe_layer_indices[i];
  }
  out << "\n";
  const MoeConfig& moe = m.moe;
  out << "\n[moe]\n";
  out << "variant = " << variant_name(moe.variant) << "\n";
  out << "n_experts = " << moe.n_experts << "\n";
  out << "top_k = " << moe.top_k << "\n";
  out << "n_shared = " << moe.n_shared << "\n";
  out << "expert_dim = " << moe.expert_dim << "\n";
  out << "xmoe_routing_dim = " << moe.xmoe_routing_dim << "\n";
  out << "n_zero_experts = " << moe.n_zero_experts << "\n";
  out << "router_init_std = " << detail::fmt_real(moe.router_init_std) << "\n";
  out << "balance_coef = " << detail::fmt_real(moe.balance_coef) << "\n";
  out << "z_coef = " << detail::fmt_real(moe.z_coef) << "\n";
  out << "temperature = " << detail::fmt_real(moe.temperature) << "\n";
  return out.str();
}

// FNV-1a over the canonical serialization: a short provenance tag attached
// to every emitted table and report.
inline std::string config_hash(const RunConfig& cfg) {
  const std::string text = serialize_run_config(cfg);
  uint64_t h = 0xcbf29ce484222325ull;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

// Applies "section.key=value" overrides on top of a base config text.
inline std::string apply_overrides(std::string text,
                                   const std::vector<std::string>& overrides) {
  for (const std::string& ov : overrides) {
    const size_t dot = ov.find('.');
    const size_t eq = ov.find('=');
    if (dot == std::string::npos || eq == std::string::npos || dot > eq)
      throw ConfigError("override must look like section.key=value: " + ov);
    const std::string sec = detail::trim(ov.substr(0, dot));
    const std::string key = detail::trim(ov.substr(dot + 1, eq - dot - 1));
    const std::string value = detail::trim(ov.substr(eq + 1));
    text += "\n[" + sec + "]\n" + key + " = " + value + "\n";
  }
  return text;
}

// ---------------------------------------------------------------------------
// JSON round-trip (checkpoint manifests embed the producing run config).
// ---------------------------------------------------------------------------

inline ordered_json run_config_to_json(const RunConfig& cfg) {
  ordered_json j;
  j["ini"] = serialize_run_config(cfg);
  j["hash"] = config_hash(cfg);
  return j;
}

inline RunConfig run_config_from_json(const ordered_json& j) {
  if (!j.contains("ini"))
    throw ManifestError("run config object is missing the 'ini' field");
  return parse_run_config(j.at("ini").get<std::string>());
}

}  // namespace moelab
