#pragma once

#include <stdexcept>
#include <string>

namespace grfhd {

// Error taxonomy mirrors the CLI exit-code table:
//   parameter_error -> 1, format_error -> 2, numerical_error -> 3, capacity_error -> 4.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid arguments, out-of-contract inputs, degenerate geometry/footprints,
// unusable object state.
class parameter_error : public error {
 public:
  using error::error;
};

// Malformed files, headers, payloads, non-lattice point clouds, bad config
// documents.
class format_error : public error {
 public:
  using error::error;
};

// Conditioning/factorization failures, non-PSD covariances past tolerance.
class numerical_error : public error {
 public:
  using error::error;
};

// Problem size exceeds the dense-solve cap.
class capacity_error : public error {
 public:
  using error::error;
};

}  // namespace grfhd
