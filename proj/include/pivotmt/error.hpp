#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pivotmt {

// Coarse error categories. The CLI prints the category name so scripts can
// branch on it without parsing the message.
enum class ErrorClass {
  usage,
  io,
  shape,
  numeric,
  vocab,
  config,
  state,
};

constexpr std::string_view to_string(ErrorClass c) {
  switch (c) {
    case ErrorClass::usage: return "usage";
    case ErrorClass::io: return "io";
    case ErrorClass::shape: return "shape";
    case ErrorClass::numeric: return "numeric";
    case ErrorClass::vocab: return "vocab";
    case ErrorClass::config: return "config";
    case ErrorClass::state: return "state";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what)
      : std::runtime_error(what), cls_(cls) {}

  ErrorClass error_class() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorClass::usage, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorClass::shape, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorClass::numeric, what) {}
};

class VocabError : public Error {
 public:
  explicit VocabError(const std::string& what) : Error(ErrorClass::vocab, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorClass::config, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorClass::io, what) {}
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& what) : Error(ErrorClass::state, what) {}
};

}  // namespace pivotmt
