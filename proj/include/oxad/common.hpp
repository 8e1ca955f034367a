#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace oxad {

using PointId = std::uint64_t;

// One d-dimensional observation. Length and finiteness are checked at the
// boundaries (learn, forget, score, ingest), not by the type itself.
using FeatureVector = std::vector<double>;

// One timestamped observation from the stream.
struct Instance {
  PointId id = 0;
  // Milliseconds since the Unix epoch.
  std::int64_t timestamp = 0;
  FeatureVector x;

  bool operator==(const Instance&) const = default;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operation is not valid in the current state (unknown id, missing labels...).
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void check_vector(std::span<const double> x, std::size_t dim) {
  if (x.size() != dim) {
    throw InputError("dimension mismatch: expected " + std::to_string(dim) +
                     " values, got " + std::to_string(x.size()));
  }
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (!std::isfinite(x[j])) {
      throw InputError("non-finite value at feature " + std::to_string(j));
    }
  }
}

}  // namespace oxad
