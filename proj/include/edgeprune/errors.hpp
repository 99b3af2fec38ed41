#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace edgeprune {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can map it to a stable machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error("invalid-argument", what) {}
};

class ConvergenceFailure : public Error {
 public:
  ConvergenceFailure(const std::string& what, double last_iterate)
      : Error("convergence-failure", what), last_iterate_(last_iterate) {}
  double last_iterate() const noexcept { return last_iterate_; }

 private:
  double last_iterate_;
};

class BracketFailure : public Error {
 public:
  explicit BracketFailure(const std::string& what) : Error("bracket-failure", what) {}
};

class DegenerateEdge : public Error {
 public:
  explicit DegenerateEdge(const std::string& what) : Error("degenerate-edge", what) {}
};

class ShapeMismatch : public Error {
 public:
  explicit ShapeMismatch(const std::string& what) : Error("shape-mismatch", what) {}
};

class NumericOverflow : public Error {
 public:
  explicit NumericOverflow(const std::string& what) : Error("numeric-overflow", what) {}
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error("format-error", what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace edgeprune
