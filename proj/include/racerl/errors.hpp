#pragma once

#include <stdexcept>
#include <string>

namespace racerl {

/// Tensor or vector dimensions do not line up.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite value where a finite one is required.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, int layer_index = -1)
      : std::runtime_error(what), layer_index_(layer_index) {}

  /// Offending dense layer index, or -1 for the recurrent cell / unknown.
  int layer_index() const { return layer_index_; }

 private:
  int layer_index_;
};

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Replay buffer cannot serve the requested batch yet.
class NotReadyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace racerl
