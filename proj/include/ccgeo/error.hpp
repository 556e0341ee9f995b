#ifndef CCGEO_ERROR_HPP_
#define CCGEO_ERROR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ccgeo {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed expression text. `offset` is the byte offset of the failure.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Evaluation left the domain of an operation (division by zero, sqrt of a
/// negative number, non-finite result). `path` names the offending node as a
/// dot-separated list of child indices from the root.
class DomainError : public Error {
 public:
  DomainError(const std::string& what, std::string path)
      : Error(what + " at node [" + path + "]"), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Arity or dimension mismatch between expressions, fields and points.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Trajectory left the guarded domain or produced a non-finite state.
class FlowError : public Error {
 public:
  using Error::Error;
};

/// Violated precondition of a geometric construction (characteristic point,
/// invalid certificate, singular Jacobian, ...).
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Scenario file could not be read or failed validation.
class ScenarioError : public Error {
 public:
  ScenarioError(const std::string& what, int line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace ccgeo

#endif  // CCGEO_ERROR_HPP_
