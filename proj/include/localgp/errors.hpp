#pragma once

#include <stdexcept>
#include <string>

namespace localgp {

/// Base class for all library failures.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite or otherwise malformed numeric input.
struct InvalidInputError : Error {
  explicit InvalidInputError(const std::string& what) : Error(what) {}
};

/// Shape disagreement between operands.
struct DimensionError : Error {
  explicit DimensionError(const std::string& what) : Error(what) {}
};

/// SPD factorization or extension failure. `pivot` is the offending
/// pivot/step index when known, -1 otherwise.
struct ConditioningError : Error {
  int pivot;
  explicit ConditioningError(const std::string& what, int pivot_index = -1)
      : Error(what), pivot(pivot_index) {}
};

/// Every candidate in a greedy step was infeasible.
struct DesignStallError : Error {
  explicit DesignStallError(const std::string& what) : Error(what) {}
};

/// Input file / CSV problems (CLI surface).
struct DataError : Error {
  explicit DataError(const std::string& what) : Error(what) {}
};

}  // namespace localgp
