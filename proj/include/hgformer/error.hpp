#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hgf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vector lengths or matrix shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A vector passed as a tangent vector has spacelike-negative Minkowski norm.
class InvalidTangentError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf values, vanishing denominators and similar numeric breakdowns.
class NumericError : public Error {
 public:
  using Error::Error;
};

class SamplingExhaustedError : public Error {
 public:
  using Error::Error;
};

}  // namespace hgf
