#pragma once

#include <stdexcept>
#include <string>

namespace trajcast {

// Base for all library errors. Subclasses map to CLI exit codes:
// config/parse/schema -> 1, divergence -> 2.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error {
  using Error::Error;
};

// A tensor op produced NaN/Inf, or non-finite input reached the model.
struct NumericError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

struct SchemaError : Error {
  using Error::Error;
};

// Params/grads/optimizer state disagree (e.g. missing gradient entry).
struct ConsistencyError : Error {
  using Error::Error;
};

struct DivergenceError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace trajcast
