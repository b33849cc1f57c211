#pragma once

#include <stdexcept>
#include <string>

namespace elab {

// Thrown for malformed or inconsistent configuration. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a caller violates a documented precondition.
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// Thrown when a safety precondition for a run is not met (e.g. missing
// limitation matrices in training mode). The CLI maps this to exit code 3.
class SafetyPreconditionError : public std::runtime_error {
 public:
  explicit SafetyPreconditionError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace elab
