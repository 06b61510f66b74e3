#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace drmim {

// Every failure surfaced to callers derives from Error so the CLI can render
// a one-line "error: <kind>: <message>".
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};

struct DomainError : Error {
  explicit DomainError(const std::string& m) : Error("domain", m) {}
};

struct ContractError : Error {
  explicit ContractError(const std::string& m) : Error("contract", m) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};

struct ParseError : Error {
  explicit ParseError(const std::string& m) : Error("parse", m) {}
};

struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
};

struct CheckpointError : Error {
  explicit CheckpointError(const std::string& m) : Error("checkpoint", m) {}
};

struct TrainError : Error {
  explicit TrainError(const std::string& m) : Error("train", m) {}
};

}  // namespace drmim
