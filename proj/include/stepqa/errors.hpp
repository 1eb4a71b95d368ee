#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace stepqa {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Incompatible operand shapes; keeps both shapes for the caller.
class ShapeError : public std::runtime_error {
 public:
  ShapeError(const std::string& what_arg, Shape lhs, Shape rhs)
      : std::runtime_error(what_arg + " (shapes " + shape_str(lhs) + " and " + shape_str(rhs) + ")"),
        lhs_(std::move(lhs)),
        rhs_(std::move(rhs)) {}

  const Shape& lhs() const { return lhs_; }
  const Shape& rhs() const { return rhs_; }

 private:
  Shape lhs_;
  Shape rhs_;
};

struct EmptyAxisError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonScalarLossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptySequenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed dataset record; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what_arg)
      : std::runtime_error("line " + std::to_string(line) + ": " + what_arg), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct DimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RefError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingLabelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateStepError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IndexError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyDatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace stepqa
