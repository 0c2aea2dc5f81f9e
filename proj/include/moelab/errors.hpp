// Copyright (c) 2026 moelab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace moelab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape / dimension mismatches.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad input data (out-of-range ids, short corpus, non-finite values).
class DataError : public Error {
 public:
  using Error::Error;
};

// Misuse of the differentiation tape (e.g. backward without a fresh forward).
class TapeError : public Error {
 public:
  using Error::Error;
};

// Corrupt or inconsistent checkpoint manifests.
class ManifestError : public Error {
 public:
  using Error::Error;
};

// Routing logs whose (layer, token) key sets do not match.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

}  // namespace moelab
