#pragma once

#include <stdexcept>
#include <string>

namespace xlsum {

// Every error carries a short machine-readable tag; the CLI prints it as
// `error[<tag>]: <message>` on a single line.
class Error : public std::runtime_error {
 public:
  Error(std::string tag, const std::string& message)
      : std::runtime_error(message), tag_(std::move(tag)) {}
  const std::string& tag() const noexcept { return tag_; }

 private:
  std::string tag_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& m) : Error("index", m) {}
};

// Violated precondition of an operation (bad argument, missing field, ...).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& m) : Error("contract", m) {}

 protected:
  ContractError(std::string tag, const std::string& m) : Error(std::move(tag), m) {}
};

// A required upstream artifact or model is missing.
class PrerequisiteError : public ContractError {
 public:
  explicit PrerequisiteError(const std::string& m) : ContractError("prerequisite", m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error("io", m) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& m) : Error("format", m) {}
};

}  // namespace xlsum
