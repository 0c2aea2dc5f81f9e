// Copyright (c) 2026 moelab authors
// SPDX-License-Identifier: Apache-2.0
//
// Corpus handling: byte-level tokenization (identity map, vocab 256), a
// contiguous tail train/validation split, deterministic shuffled-window
// batching for training, sequential full-coverage windows for evaluation,
// and a seeded synthetic multi-domain corpus generator.

#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "moelab/errors.hpp"
#include "moelab/rng.hpp"

namespace moelab {

constexpr int kByteVocab = 256;

// ---------------------------------------------------------------------------
// Tokenization: bytes are the vocabulary.
// ---------------------------------------------------------------------------

inline std::vector<int32_t> tokenize_bytes(const std::string& text) {
  std::vector<int32_t> ids(text.size());
  for (size_t i = 0; i < text.size(); ++i)
    ids[i] = static_cast<int32_t>(static_cast<unsigned char>(text[i]));
  return ids;
}

inline std::string detokenize(const std::vector<int32_t>& ids) {
  std::string out(ids.size(), '\0');
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= kByteVocab)
      throw DataError("token id " + std::to_string(ids[i]) +
                      " outside byte range at position " + std::to_string(i));
    out[i] = static_cast<char>(static_cast<unsigned char>(ids[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus: train/validation split
// ---------------------------------------------------------------------------

struct Corpus {
  std::vector<int32_t> train_tokens;
  std::vector<int32_t> val_tokens;
  int vocab_size = kByteVocab;
};

// The validation split is the contiguous corpus tail, so no training window
// can leak validation tokens.
inline Corpus split_corpus(std::vector<int32_t> tokens, double val_fraction) {
  if (!(val_fraction > 0.0) || !(val_fraction < 1.0))
    throw ConfigError("val_fraction must lie in (0, 1), got " +
                      std::to_string(val_fraction));
  const size_t n_val =
      static_cast<size_t>(static_cast<double>(tokens.size()) * val_fraction);
  if (n_val == 0 || n_val >= tokens.size())
    throw DataError("corpus of " + std::to_string(tokens.size()) +
                    " tokens cannot be split at fraction " +
                    std::to_string(val_fraction));
  Corpus c;
  const size_t n_train = tokens.size() - n_val;
  c.val_tokens.assign(tokens.begin() + static_cast<ptrdiff_t>(n_train),
                      tokens.end());
  tokens.resize(n_train);
  c.train_tokens = std::move(tokens);
  return c;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return text;
}

// Concatenates the given files in order and splits off the validation tail.
inline Corpus load_corpus(const std::vector<std::string>& paths,
                          double val_fraction) {
  if (paths.empty()) throw ConfigError("no corpus files given");
  std::string all;
  for (const std::string& p : paths) all += read_file_bytes(p);
  return split_corpus(tokenize_bytes(all), val_fraction);
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct Batch {
  std::vector<int32_t> inputs;   // [batch * seq] row-major
  std::vector<int32_t> targets;  // inputs shifted one position right
  int batch = 0;
  int seq = 0;
};

// Non-overlapping window start offsets at stride seq_len, plus one final
// overlapping window so the corpus tail is covered (sequential mode).
inline std::vector<size_t> sequential_starts(size_t n_tokens, int seq_len) {
  const size_t t = static_cast<size_t>(seq_len);
  if (n_tokens < t + 1)
    throw DataError("corpus of " + std::to_string(n_tokens) +
                    " tokens is shorter than one window of " +
                    std::to_string(t + 1));
  const size_t last = n_tokens - t - 1;  // largest in-bounds start
  std::vector<size_t> starts;
  for (size_t s = 0; s <= last; s += t) starts.push_back(s);
  if (starts.back() != last) starts.push_back(last);
  return starts;
}

// Assembles (input, target) rows for `count` consecutive starts.
inline Batch window_batch(const std::vector<int32_t>& tokens,
                          const std::vector<size_t>& starts, size_t from,
                          int count, int seq_len) {
  Batch b;
  b.batch = count;
  b.seq = seq_len;
  b.inputs.reserve(static_cast<size_t>(count) * seq_len);
  b.targets.reserve(static_cast<size_t>(count) * seq_len);
  for (int i = 0; i < count; ++i) {
    const size_t s = starts[from + static_cast<size_t>(i)];
    for (int j = 0; j < seq_len; ++j) {
      b.inputs.push_back(tokens[s + static_cast<size_t>(j)]);
      b.targets.push_back(tokens[s + static_cast<size_t>(j) + 1]);
    }
  }
  return b;
}

// Endless training stream: each epoch visits every window start exactly once
// in a freshly shuffled order; batches that straddle an epoch boundary pull
// the remainder from the next epoch's order.
class BatchStream {
 public:
  BatchStream(const std::vector<int32_t>& tokens, int seq_len, int batch_size,
              uint64_t seed)
      : tokens_(tokens),
        seq_len_(seq_len),
        batch_size_(batch_size),
        rng_(seed),
        starts_(sequential_starts(tokens.size(), seq_len)) {
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    rng_.shuffle(starts_);
  }

  int epoch() const { return epoch_; }

  Batch next() {
    Batch b;
    b.batch = batch_size_;
    b.seq = seq_len_;
    const size_t n = static_cast<size_t>(batch_size_) * seq_len_;
    b.inputs.reserve(n);
    b.targets.reserve(n);
    for (int i = 0; i < batch_size_; ++i) {
      if (pos_ == starts_.size()) {
        rng_.shuffle(starts_);
        pos_ = 0;
        ++epoch_;
      }
      const size_t s = starts_[pos_++];
      for (int j = 0; j < seq_len_; ++j) {
        b.inputs.push_back(tokens_[s + static_cast<size_t>(j)]);
        b.targets.push_back(tokens_[s + static_cast<size_t>(j) + 1]);
      }
    }
    return b;
  }

 private:
  const std::vector<int32_t>& tokens_;
  int seq_len_;
  int batch_size_;
  Rng rng_;
  std::vector<size_t> starts_;
  size_t pos_ = 0;
  int epoch_ = 0;
};

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------
//
// Deterministic multi-domain ASCII text. Four domains with visibly different
// byte statistics (prose built from a seeded syllable vocabulary, correct
// small-number arithmetic, key-value records, and bracket/run patterns) are
// interleaved in blocks so routers have structure to specialize on.

namespace detail {

inline std::string synth_word(Rng& rng) {
  static const char* kOnsets[] = {"b",  "br", "c",  "cl", "d",  "dr", "f",
                                  "g",  "gr", "h",  "j",  "k",  "l",  "m",
                                  "n",  "p",  "pl", "r",  "s",  "st", "t",
                                  "tr", "v",  "w"};
  static const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ea", "ou"};
  static const char* kCodas[] = {"",  "n", "r", "s",  "t",  "l",
                                 "m", "d", "k", "nd", "st", "ng"};
  std::string w;
  const int syllables = 1 + static_cast<int>(rng.next_below(3));
  for (int s = 0; s < syllables; ++s) {
    w += kOnsets[rng.next_below(sizeof(kOnsets) / sizeof(kOnsets[0]))];
    w += kVowels[rng.next_below(sizeof(kVowels) / sizeof(kVowels[0]))];
    if (s + 1 == syllables)
      w += kCodas[rng.next_below(sizeof(kCodas) / sizeof(kCodas[0]))];
  }
  return w;
}

inline void synth_prose(Rng& rng, const std::vector<std::string>& vocab,
                        std::string* out) {
  const int words = 5 + static_cast<int>(rng.next_below(9));
  for (int i = 0; i < words; ++i) {
    std::string w = vocab[rng.next_below(vocab.size())];
    if (i == 0) w[0] = static_cast<char>(w[0] - 'a' + 'A');
    *out += w;
    *out += (i + 1 == words) ? "." : " ";
  }
  *out += '\n';
}

inline void synth_arithmetic(Rng& rng, std::string* out) {
  const int a = static_cast<int>(rng.next_below(90)) + 10;
  const int b = static_cast<int>(rng.next_below(90)) + 10;
  const bool add = rng.next_below(2) == 0;
  *out += std::to_string(a);
  *out += add ? " + " : " - ";
  *out += std::to_string(b);
  *out += " = ";
  *out += std::to_string(add ? a + b : a - b);
  *out += '\n';
}

inline void synth_record(Rng& rng, const std::vector<std::string>& vocab,
                         std::string* out) {
  static const char* kStates[] = {"true", "false", "none"};
  *out += "{id: ";
  *out += std::to_string(rng.next_below(10000));
  *out += ", tag: ";
  *out += vocab[rng.next_below(16)];  // small tag set: high reuse
  *out += ", ok: ";
  *out += kStates[rng.next_below(3)];
  *out += "}\n";
}

inline void synth_pattern(Rng& rng, std::string* out) {
  if (rng.next_below(2) == 0) {
    const char c = static_cast<char>('a' + rng.next_below(4));
    const char d = static_cast<char>('w' + rng.next_below(3));
    const int reps = 6 + static_cast<int>(rng.next_below(10));
    for (int i = 0; i < reps; ++i) {
      *out += c;
      *out += d;
    }
  } else {
    const int depth = 3 + static_cast<int>(rng.next_below(5));
    for (int i = 0; i < depth; ++i) *out += '(';
    *out += '*';
    for (int i = 0; i < depth; ++i) *out += ')';
  }
  *out += '\n';
}

}  // namespace detail

inline std::string synth_corpus(size_t bytes, uint64_t seed) {
  if (bytes == 0) throw ConfigError("synthetic corpus size must be positive");
  Rng rng(seed);
  std::vector<std::string> vocab;
  vocab.reserve(200);
  for (int i = 0; i < 200; ++i) vocab.push_back(detail::synth_word(rng));

  std::string out;
  out.reserve(bytes + 1024);
  while (out.size() < bytes) {
    const uint64_t domain = rng.next_below(4);
    // A block of several lines keeps domain statistics locally coherent.
    const int lines = 4 + static_cast<int>(rng.next_below(8));
    for (int i = 0; i < lines; ++i) {
      switch (domain) {
        case 0: detail::synth_prose(rng, vocab, &out); break;
        case 1: detail::synth_arithmetic(rng, &out); break;
        case 2: detail::synth_record(rng, vocab, &out); break;
        default: detail::synth_pattern(rng, &out); break;
      }
    }
  }
  out.resize(bytes);
  return out;
}

}  // namespace moelab
