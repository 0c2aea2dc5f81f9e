// Copyright (c) 2026 moelab authors
// SPDX-License-Identifier: Apache-2.0
//
// Routing log files: one JSON header line describing the producing run and
// checkpoint, then one JSON line per (layer, token) holding the selected
// expert ids, their gate weights, and the full router logits. Files ending
// in ".gz" are written gzip-compressed; reading is transparent for both.

#pragma once

#include <zlib.h>

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "moelab/config.hpp"
#include "moelab/errors.hpp"
#include "moelab/moe.hpp"

namespace moelab {

struct RoutingLogHeader {
  std::string run_id;
  int step = 0;            // checkpoint step the log was captured at
  int n_layers = 0;        // MoE layers contributing records
  int n_routable = 0;      // routable pool size N
  int top_k = 0;           // K
  std::string variant;
  std::string config_hash;
};

struct RoutingLog {
  RoutingLogHeader header;
  std::vector<RoutingRecord> records;
};

namespace detail {

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Line sink that gzip-compresses when the path ends in ".gz" and writes
// plain text otherwise.
class LogWriter {
 public:
  explicit LogWriter(const std::string& path) : path_(path) {
    if (ends_with(path, ".gz")) {
      gz_ = gzopen(path.c_str(), "wb");
      if (gz_ == nullptr) throw DataError("cannot write log: " + path);
    } else {
      plain_.open(path, std::ios::binary | std::ios::trunc);
      if (!plain_) throw DataError("cannot write log: " + path);
    }
  }
  ~LogWriter() {
    if (gz_ != nullptr) gzclose(gz_);
  }
  LogWriter(const LogWriter&) = delete;
  LogWriter& operator=(const LogWriter&) = delete;

  void line(const std::string& s) {
    if (gz_ != nullptr) {
      if (gzwrite(gz_, s.data(), static_cast<unsigned>(s.size())) !=
              static_cast<int>(s.size()) ||
          gzwrite(gz_, "\n", 1) != 1)
        throw DataError("short write on log: " + path_);
    } else {
      plain_ << s << '\n';
      if (!plain_) throw DataError("short write on log: " + path_);
    }
  }

 private:
  std::string path_;
  gzFile gz_ = nullptr;
  std::ofstream plain_;
};

}  // namespace detail

inline ordered_json routing_header_json(const RoutingLogHeader& h) {
  ordered_json j;
  j["run_id"] = h.run_id;
  j["step"] = h.step;
  j["n_layers"] = h.n_layers;
  j["n_routable"] = h.n_routable;
  j["top_k"] = h.top_k;
  j["variant"] = h.variant;
  j["config_hash"] = h.config_hash;
  return j;
}

// Writes header + records. A ".gz" suffix selects gzip compression; the
// uncompressed line format is identical either way.
inline void write_routing_log(const std::string& path,
                              const RoutingLogHeader& header,
                              const std::vector<RoutingRecord>& records) {
  detail::LogWriter out(path);
  out.line(routing_header_json(header).dump());
  for (const RoutingRecord& r : records) {
    ordered_json j;
    j["layer"] = r.layer;
    j["token"] = r.token_position;
    j["ids"] = r.selected_ids;
    j["gates"] = r.gate_weights;
    j["logits"] = r.full_logits;
    out.line(j.dump());
  }
}

inline RoutingLog read_routing_log(const std::string& path) {
  gzFile in = gzopen(path.c_str(), "rb");  // transparently reads plain files
  if (in == nullptr) throw DataError("cannot open log: " + path);

  std::string text;
  char buf[1 << 16];
  int got = 0;
  while ((got = gzread(in, buf, sizeof(buf))) > 0)
    text.append(buf, static_cast<size_t>(got));
  const bool read_error = got < 0;
  gzclose(in);
  if (read_error) throw DataError("corrupt log stream: " + path);

  RoutingLog log;
  size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    ++line_no;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("log line " + std::to_string(line_no) +
                      " is not valid JSON in " + path + ": " + e.what());
    }
    try {
      if (line_no == 1) {
        log.header.run_id = j.at("run_id").get<std::string>();
        log.header.step = j.at("step").get<int>();
        log.header.n_layers = j.at("n_layers").get<int>();
        log.header.n_routable = j.at("n_routable").get<int>();
        log.header.top_k = j.at("top_k").get<int>();
        log.header.variant = j.at("variant").get<std::string>();
        log.header.config_hash = j.value("config_hash", "");
      } else {
        RoutingRecord r;
        r.layer = j.at("layer").get<int>();
        r.token_position = j.at("token").get<int>();
        r.selected_ids = j.at("ids").get<std::vector<int>>();
        r.gate_weights = j.at("gates").get<std::vector<float>>();
        r.full_logits = j.at("logits").get<std::vector<float>>();
        log.records.push_back(std::move(r));
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("log line " + std::to_string(line_no) +
                      " is missing fields in " + path + ": " + e.what());
    }
  }
  if (line_no == 0) throw DataError("log is empty: " + path);
  return log;
}

}  // namespace moelab
