#pragma once

#include <stdexcept>
#include <string>

namespace fab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration, shapes or arguments detected before any compute.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A non-finite intermediate value inside a deterministic transform.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, int layer)
      : Error(what + " (layer " + std::to_string(layer) + ")"), layer_(layer) {}

  int layer() const { return layer_; }

 private:
  int layer_;
};

// Every sample of a batch was dropped as non-finite.
class EmptyBatchError : public Error {
 public:
  using Error::Error;
};

class QuadratureError : public Error {
 public:
  using Error::Error;
};

// The rejection sampler met a point where p > k q.
class EnvelopeError : public Error {
 public:
  using Error::Error;
};

// Training hit too many consecutive non-finite updates.
class TrainingAborted : public Error {
 public:
  using Error::Error;
};

}  // namespace fab
