#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace spatial_cpf {

// Every failure raised by the library derives from Error so callers (the CLI in
// particular) can catch one type and still report the category.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(category + " error: " + what), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

/// Missing/unknown columns, empty inputs, malformed headers.
class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what) : Error("schema", what) {}
};

/// A single data row could not be parsed. Carries the 1-based file line.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("parse", "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what) : Error("parameter", what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error("data", what) {}
};

class DegenerateColumnError : public Error {
 public:
  explicit DegenerateColumnError(const std::string& column)
      : Error("degenerate-column", "column '" + column + "' has zero variance"), column_(column) {}

  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error("out-of-domain", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

class ConsistencyError : public Error {
 public:
  explicit ConsistencyError(const std::string& what) : Error("internal consistency", what) {}
};

}  // namespace spatial_cpf
