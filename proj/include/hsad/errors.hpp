#pragma once

#include <stdexcept>
#include <string>

namespace hsad {

/// Tensor shapes or layer geometries that do not fit together.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// A value outside the domain of an operation (log of a non-positive number,
/// empty reduction, single-class AUROC, ...).
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// A caller broke an API precondition (non-scalar loss, foreign tape, ...).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

/// Invalid architecture, variant or run configuration.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Training produced a non-finite loss term.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace hsad
