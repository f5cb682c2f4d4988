#pragma once

#include <stdexcept>
#include <string>

namespace sgimc {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or pattern mismatch between conforming arguments.
struct ConformanceError : Error {
  using Error::Error;
};

// Argument outside its documented domain (bad label, bad fraction, ...).
struct ValueError : Error {
  using Error::Error;
};

// Non-finite iterates, division by zero, and similar arithmetic failures.
struct NumericalError : Error {
  using Error::Error;
};

// Malformed input files.
struct ParseError : Error {
  using Error::Error;
};

// Residual-factor prediction requested for a row/column outside the
// training range; callers should fall back to the inductive part.
struct ColdStartError : Error {
  using Error::Error;
};

}  // namespace sgimc
