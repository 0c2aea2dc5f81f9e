// Copyright (c) 2026 moelab authors
// SPDX-License-Identifier: Apache-2.0
//
// Routing diagnostics computed from routing logs and layer weights:
//   - expert allocation entropy (how evenly selections spread over experts)
//   - gate weight entropy (how evenly each token splits its K gates)
//   - expert change rate between two checkpoints' logs
//   - router saturation against a final checkpoint's log
//   - router margin (top-1 minus top-2 gating score)
//   - expert co-activation matrix
//   - pairwise expert weight similarity
// All functions are pure; logs are read-only. Per-layer values and a pooled
// aggregate (every record weighted equally; for allocation entropy, counts
// summed across layers) are reported together.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "moelab/errors.hpp"
#include "moelab/moe.hpp"
#include "moelab/routing_log.hpp"

namespace moelab {

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace detail {

// Shannon entropy of a distribution (sums to 1), normalized by log2(n) so the
// uniform distribution scores 1. Zero entries contribute nothing (0·log0 = 0).
inline double entropy_norm(const std::vector<double>& p) {
  if (p.size() < 2)
    throw ConfigError("normalized entropy needs at least 2 outcomes, got " +
                      std::to_string(p.size()));
  double h = 0.0;
  for (const double v : p)
    if (v > 0.0) h -= v * std::log2(v);
  return h / std::log2(static_cast<double>(p.size()));
}

inline std::string key_name(int layer, int token) {
  return "(layer " + std::to_string(layer) + ", token " +
         std::to_string(token) + ")";
}

// Index of every (layer, token) record; duplicates violate the log contract.
inline std::map<std::pair<int, int>, size_t> record_index(
    const RoutingLog& log) {
  std::map<std::pair<int, int>, size_t> idx;
  for (size_t i = 0; i < log.records.size(); ++i) {
    const RoutingRecord& r = log.records[i];
    if (!idx.emplace(std::make_pair(r.layer, r.token_position), i).second)
      throw DataError("duplicate routing record " +
                      key_name(r.layer, r.token_position));
  }
  return idx;
}

}  // namespace detail

// Two logs are aligned when they cover exactly the same (layer, token) keys.
// Misalignment reports a sample of the keys unique to each side.
inline void check_aligned(const RoutingLog& a, const RoutingLog& b) {
  const auto ia = detail::record_index(a);
  const auto ib = detail::record_index(b);
  std::string missing;
  int shown = 0;
  const auto collect = [&](const auto& have, const auto& want,
                           const char* side) {
    for (const auto& [key, idx] : have) {
      (void)idx;
      if (want.count(key) == 0 && shown < 4) {
        missing += std::string(missing.empty() ? "" : ", ") +
                   detail::key_name(key.first, key.second) + " only in " + side;
        ++shown;
      }
    }
  };
  collect(ia, ib, "first");
  collect(ib, ia, "second");
  if (ia.size() != ib.size() || !missing.empty())
    throw AlignmentError("routing logs are misaligned (" +
                         std::to_string(ia.size()) + " vs " +
                         std::to_string(ib.size()) + " records): " +
                         (missing.empty() ? "key sets differ" : missing));
}

// Per-layer values plus the pooled aggregate. Layers are listed in ascending
// id order.
struct PerLayerValues {
  std::vector<int> layers;
  std::vector<double> values;
  double aggregate = 0.0;
};

// ---------------------------------------------------------------------------
// Expert allocation entropy
// ---------------------------------------------------------------------------

// Selection counts over the routable pool, one row per layer present.
struct SelectionCounts {
  std::vector<int> layers;
  std::vector<std::vector<long long>> counts;  // [layer][expert]
};

inline SelectionCounts selection_counts(const RoutingLog& log) {
  std::map<int, std::vector<long long>> per_layer;
  const size_t n = static_cast<size_t>(log.header.n_routable);
  for (const RoutingRecord& r : log.records) {
    auto& c = per_layer[r.layer];
    if (c.empty()) c.assign(n, 0);
    for (const int id : r.selected_ids) {
      if (id < 0 || static_cast<size_t>(id) >= n)
        throw DataError("selected expert id " + std::to_string(id) +
                        " outside the routable pool of " + std::to_string(n));
      ++c[static_cast<size_t>(id)];
    }
  }
  SelectionCounts out;
  for (auto& [layer, counts] : per_layer) {
    out.layers.push_back(layer);
    out.counts.push_back(std::move(counts));
  }
  return out;
}

// Normalized entropy of how often each expert was selected: 1 = perfectly
// uniform allocation, 0 = all selections on a single expert.
inline double expert_allocation_entropy(const std::vector<long long>& counts) {
  if (counts.size() < 2)
    throw ConfigError("allocation entropy needs at least 2 experts, got " +
                      std::to_string(counts.size()));
  long long total = 0;
  for (const long long c : counts) {
    if (c < 0) throw DataError("negative selection count");
    total += c;
  }
  if (total == 0) throw DataError("allocation entropy of all-zero counts");
  std::vector<double> p(counts.size());
  for (size_t i = 0; i < counts.size(); ++i)
    p[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  return detail::entropy_norm(p);
}

inline PerLayerValues expert_allocation_entropy(const RoutingLog& log) {
  const SelectionCounts sc = selection_counts(log);
  if (sc.layers.empty()) throw DataError("routing log holds no records");
  PerLayerValues out;
  out.layers = sc.layers;
  std::vector<long long> pooled(static_cast<size_t>(log.header.n_routable), 0);
  for (const auto& counts : sc.counts) {
    out.values.push_back(expert_allocation_entropy(counts));
    for (size_t i = 0; i < counts.size(); ++i) pooled[i] += counts[i];
  }
  out.aggregate = expert_allocation_entropy(pooled);
  return out;
}

// ---------------------------------------------------------------------------
// Gate weight entropy
// ---------------------------------------------------------------------------

// Normalized entropy of one token's selected gate weights, renormalized to a
// distribution first (sigmoid gates need not sum to one).
inline double gate_weight_entropy(const std::vector<float>& gates) {
  if (gates.size() < 2)
    throw ConfigError("gate weight entropy needs at least 2 gates, got " +
                      std::to_string(gates.size()));
  double sum = 0.0;
  for (const float g : gates) {
    if (!(g >= 0.0f))
      throw DataError("gate weight entropy of a negative gate: " +
                      std::to_string(g));
    sum += g;
  }
  if (!(sum > 0.0)) throw DataError("gate weight entropy of all-zero gates");
  std::vector<double> p(gates.size());
  for (size_t i = 0; i < gates.size(); ++i) p[i] = gates[i] / sum;
  return detail::entropy_norm(p);
}

inline PerLayerValues gate_weight_entropy(const RoutingLog& log) {
  if (log.records.empty()) throw DataError("routing log holds no records");
  std::map<int, std::pair<double, long long>> acc;  // layer -> (sum, count)
  double pooled = 0.0;
  for (const RoutingRecord& r : log.records) {
    const double h = gate_weight_entropy(r.gate_weights);
    auto& [sum, count] = acc[r.layer];
    sum += h;
    ++count;
    pooled += h;
  }
  PerLayerValues out;
  for (const auto& [layer, sc] : acc) {
    out.layers.push_back(layer);
    out.values.push_back(sc.first / static_cast<double>(sc.second));
  }
  out.aggregate = pooled / static_cast<double>(log.records.size());
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint-pair metrics: change rate and saturation
// ---------------------------------------------------------------------------

namespace detail {

// Applies `fn(record_a, record_b)` over aligned record pairs and averages the
// results per layer and pooled.
template <typename F>
inline PerLayerValues mean_over_aligned(const RoutingLog& a,
                                        const RoutingLog& b, F&& fn) {
  check_aligned(a, b);
  const auto ib = record_index(b);
  std::map<int, std::pair<double, long long>> acc;
  double pooled = 0.0;
  for (const RoutingRecord& ra : a.records) {
    const RoutingRecord& rb =
        b.records[ib.at(std::make_pair(ra.layer, ra.token_position))];
    const double v = fn(ra, rb);
    auto& [sum, count] = acc[ra.layer];
    sum += v;
    ++count;
    pooled += v;
  }
  PerLayerValues out;
  for (const auto& [layer, sc] : acc) {
    out.layers.push_back(layer);
    out.values.push_back(sc.first / static_cast<double>(sc.second));
  }
  out.aggregate = pooled / static_cast<double>(a.records.size());
  return out;
}

inline size_t overlap_count(const std::vector<int>& a, const std::vector<int>& b,
                            size_t k) {
  size_t n = 0;
  for (size_t i = 0; i < k; ++i)
    for (size_t j = 0; j < k; ++j)
      if (a[i] == b[j]) {
        ++n;
        break;
      }
  return n;
}

}  // namespace detail

// Fraction of (layer, token) entries whose selected expert *set* differs
// between the two logs. `fractional` instead scores each token by the share
// of its K slots that changed, so partial set changes count partially.
inline PerLayerValues expert_change_rate(const RoutingLog& a,
                                         const RoutingLog& b,
                                         bool fractional = false) {
  return detail::mean_over_aligned(
      a, b, [&](const RoutingRecord& ra, const RoutingRecord& rb) {
        if (ra.selected_ids.size() != rb.selected_ids.size())
          throw AlignmentError(
              "selected set sizes differ at " +
              detail::key_name(ra.layer, ra.token_position) + ": " +
              std::to_string(ra.selected_ids.size()) + " vs " +
              std::to_string(rb.selected_ids.size()));
        const size_t k = ra.selected_ids.size();
        const size_t overlap =
            detail::overlap_count(ra.selected_ids, rb.selected_ids, k);
        if (fractional)
          return 1.0 - static_cast<double>(overlap) / static_cast<double>(k);
        return overlap == k ? 0.0 : 1.0;
      });
}

// Mean overlap between each token's top-k selection in `log_t` and in the
// final checkpoint's `log_final`. 1 = routing already matches the final
// decisions; supports k below the logged K (ids are stored best-first).
inline PerLayerValues router_saturation(const RoutingLog& log_t,
                                        const RoutingLog& log_final, int k) {
  if (k < 1) throw ConfigError("saturation k must be at least 1");
  return detail::mean_over_aligned(
      log_t, log_final, [&](const RoutingRecord& ra, const RoutingRecord& rb) {
        if (static_cast<size_t>(k) > ra.selected_ids.size() ||
            static_cast<size_t>(k) > rb.selected_ids.size())
          throw ConfigError("saturation k " + std::to_string(k) +
                            " exceeds the logged selection size at " +
                            detail::key_name(ra.layer, ra.token_position));
        const size_t overlap = detail::overlap_count(
            ra.selected_ids, rb.selected_ids, static_cast<size_t>(k));
        return static_cast<double>(overlap) / static_cast<double>(k);
      });
}

// ---------------------------------------------------------------------------
// Router margin
// ---------------------------------------------------------------------------

// Mean difference between the two largest gating scores of the full pre-mask
// activation: softmax over all N logits for softmax-scored variants, raw
// per-logit sigmoid for sigmoid-scored ones (chosen by the log's variant).
inline PerLayerValues router_margin(const RoutingLog& log) {
  if (log.records.empty()) throw DataError("routing log holds no records");
  if (log.header.n_routable < 2)
    throw ConfigError("router margin needs at least 2 routable experts");
  const ScoreKind kind = score_kind(variant_from_name(log.header.variant));
  return detail::mean_over_aligned(  // self-pairing reuses the layer averaging
      log, log, [&](const RoutingRecord& ra, const RoutingRecord&) {
        const std::vector<float>& logits = ra.full_logits;
        if (logits.size() < 2)
          throw DataError("record at " +
                          detail::key_name(ra.layer, ra.token_position) +
                          " holds fewer than 2 logits");
        std::vector<double> score(logits.size());
        if (kind == ScoreKind::kSoftmax) {
          const double mx = *std::max_element(logits.begin(), logits.end());
          double denom = 0.0;
          for (size_t i = 0; i < logits.size(); ++i) {
            score[i] = std::exp(static_cast<double>(logits[i]) - mx);
            denom += score[i];
          }
          for (double& s : score) s /= denom;
        } else {
          for (size_t i = 0; i < logits.size(); ++i)
            score[i] = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[i])));
        }
        double top1 = -1.0, top2 = -1.0;
        for (const double s : score) {
          if (s > top1) {
            top2 = top1;
            top1 = s;
          } else if (s > top2) {
            top2 = s;
          }
        }
        return top1 - top2;
      });
}

// ---------------------------------------------------------------------------
// Expert co-activation
// ---------------------------------------------------------------------------

struct CoactivationResult {
  std::vector<std::vector<double>> matrix;  // [N x N], rows labeled by expert
  std::vector<long long> activations;       // N_i per expert
  std::vector<int> inactive;                // experts with N_i == 0 (zero rows)
};

// matrix[i][j] = (tokens selecting both i and j) / (tokens selecting i).
// The diagonal is 1 for every active expert; rows of never-selected experts
// stay all-zero and are listed in `inactive`. `layer` = -1 pools all layers.
inline CoactivationResult expert_coactivation(const RoutingLog& log,
                                              int layer = -1) {
  const size_t n = static_cast<size_t>(log.header.n_routable);
  if (n < 1) throw ConfigError("co-activation needs a routable pool");
  CoactivationResult out;
  out.activations.assign(n, 0);
  std::vector<std::vector<long long>> both(n, std::vector<long long>(n, 0));
  for (const RoutingRecord& r : log.records) {
    if (layer >= 0 && r.layer != layer) continue;
    for (const int i : r.selected_ids) {
      if (i < 0 || static_cast<size_t>(i) >= n)
        throw DataError("selected expert id " + std::to_string(i) +
                        " outside the routable pool of " + std::to_string(n));
      ++out.activations[static_cast<size_t>(i)];
      for (const int j : r.selected_ids)
        if (j != i) ++both[static_cast<size_t>(i)][static_cast<size_t>(j)];
    }
  }
  out.matrix.assign(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i) {
    if (out.activations[i] == 0) {
      out.inactive.push_back(static_cast<int>(i));
      continue;
    }
    out.matrix[i][i] = 1.0;
    for (size_t j = 0; j < n; ++j)
      if (j != i)
        out.matrix[i][j] = static_cast<double>(both[i][j]) /
                           static_cast<double>(out.activations[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Expert weight similarity
// ---------------------------------------------------------------------------

struct SimilarityResult {
  std::vector<std::vector<double>> matrix;  // pairwise cosine over experts
  double mean_off_diagonal = 0.0;
};

// Cosine similarity between the flattened output-projection matrices (w2) of
// every parameterized expert pair at one layer. Virtual pool entries (zero,
// copy, negated duplicates) carry no distinct weights and do not appear.
inline SimilarityResult expert_similarity(const MoeLayer& layer) {
  const size_t n = layer.experts.size();
  if (n < 2)
    throw ConfigError("expert similarity needs at least 2 experts, got " +
                      std::to_string(n));
  std::vector<double> norms(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    const std::vector<float>& w = layer.experts[i].w2.values();
    double ss = 0.0;
    for (const float v : w) ss += static_cast<double>(v) * v;
    norms[i] = std::sqrt(ss);
  }
  SimilarityResult out;
  out.matrix.assign(n, std::vector<double>(n, 1.0));
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      const std::vector<float>& a = layer.experts[i].w2.values();
      const std::vector<float>& b = layer.experts[j].w2.values();
      if (a.size() != b.size())
        throw ShapeError("expert output projections differ in size");
      double dot = 0.0;
      for (size_t t = 0; t < a.size(); ++t)
        dot += static_cast<double>(a[t]) * b[t];
      const double denom = norms[i] * norms[j];
      const double cos = denom > 0.0 ? dot / denom : 0.0;
      out.matrix[i][j] = out.matrix[j][i] = cos;
      sum += cos;
    }
  out.mean_off_diagonal = sum / (static_cast<double>(n) * (n - 1) / 2.0);
  return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

// A computed metric in exportable form: JSON for programmatic use, CSV for
// tabular tooling. Matrices carry expert-id row/column labels.
struct MetricReport {
  std::string metric;
  std::string scope;                // "per-layer" | "aggregate" | "matrix"
  std::vector<std::string> labels;  // one per value row
  std::vector<double> values;
  std::vector<std::vector<double>> matrix;
  std::vector<int> source_steps;
  ordered_json parameters = ordered_json::object();

  ordered_json to_json() const {
    ordered_json j;
    j["metric"] = metric;
    j["scope"] = scope;
    j["source_steps"] = source_steps;
    j["parameters"] = parameters;
    if (matrix.empty()) {
      ordered_json rows = ordered_json::object();
      for (size_t i = 0; i < labels.size(); ++i) rows[labels[i]] = values[i];
      j["values"] = rows;
    } else {
      j["labels"] = labels;
      j["matrix"] = matrix;
    }
    return j;
  }

  std::string to_csv() const {
    std::string out;
    if (matrix.empty()) {
      out = "label,value\n";
      for (size_t i = 0; i < labels.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.9g", values[i]);
        out += labels[i] + "," + buf + "\n";
      }
    } else {
      out = "expert";
      for (const std::string& l : labels) out += "," + l;
      out += "\n";
      for (size_t i = 0; i < matrix.size(); ++i) {
        out += labels[i];
        for (const double v : matrix[i]) {
          char buf[64];
          std::snprintf(buf, sizeof(buf), ",%.9g", v);
          out += buf;
        }
        out += "\n";
      }
    }
    return out;
  }
};

// Per-layer metric rows plus the pooled aggregate as the last row.
inline MetricReport make_layer_report(const std::string& metric,
                                      const PerLayerValues& v,
                                      std::vector<int> source_steps,
                                      ordered_json parameters = {}) {
  MetricReport r;
  r.metric = metric;
  r.scope = "per-layer";
  for (size_t i = 0; i < v.layers.size(); ++i) {
    r.labels.push_back("layer" + std::to_string(v.layers[i]));
    r.values.push_back(v.values[i]);
  }
  r.labels.push_back("aggregate");
  r.values.push_back(v.aggregate);
  r.source_steps = std::move(source_steps);
  if (!parameters.is_null()) r.parameters = std::move(parameters);
  return r;
}

inline MetricReport make_matrix_report(const std::string& metric,
                                       const std::vector<std::vector<double>>& m,
                                       std::vector<int> source_steps,
                                       ordered_json parameters = {}) {
  MetricReport r;
  r.metric = metric;
  r.scope = "matrix";
  for (size_t i = 0; i < m.size(); ++i)
    r.labels.push_back("expert" + std::to_string(i));
  r.matrix = m;
  r.source_steps = std::move(source_steps);
  if (!parameters.is_null()) r.parameters = std::move(parameters);
  return r;
}

}  // namespace moelab
