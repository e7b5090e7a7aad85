#pragma once

#include <cstdint>
#include <string>

#include "localgp/errors.hpp"
#include "localgp/kernel.hpp"

namespace localgp {

/// Greedy selection criterion. NN ignores the responses and theta; ALC and
/// MSPE score candidates through the local state.
enum class Method { kNN, kALC, kMSPE };
using Criterion = Method;

inline std::string method_name(Method m) {
  switch (m) {
    case Method::kNN:
      return "nn";
    case Method::kALC:
      return "alc";
    default:
      return "mspe";
  }
}

inline Method method_from_name(const std::string& name) {
  if (name == "nn") return Method::kNN;
  if (name == "alc") return Method::kALC;
  if (name == "mspe") return Method::kMSPE;
  throw InvalidInputError("unknown method: " + name);
}

/// Spatial smoothing of the per-location theta-hat field between stages.
/// bandwidth <= 0 selects the per-location k-th neighbor distance.
struct SmoothConfig {
  bool enabled = true;
  int k = 12;
  double bandwidth = 0.0;
};

/// One global emulation run: criterion, design sizes, theta policy,
/// staging, and parallelism.
struct StageConfig {
  Method method = Method::kALC;
  int n0 = 6;
  int n = 50;
  int close = 1000;  // candidate limit N'
  int stages = 2;
  double theta0 = 0.0;  // <= 0: auto from the distance quantile
  double theta0_quantile = 0.1;
  double eta = kDefaultNugget;
  bool estimate_theta = true;  // false reproduces the "nomle" variants
  SmoothConfig smooth;
  bool refit_after_smooth = false;  // re-run selection at smoothed theta
  int workers = 0;                  // 0: env override, then hardware
  std::uint64_t seed = 42;
  double mle_tol = 1e-5;
  int mle_max_iter = 50;

  void validate(int design_n) const {
    if (n0 < 1 || n < n0) throw InvalidInputError("config: need 1 <= n0 <= n");
    if (close < n) throw InvalidInputError("config: close must be >= n");
    if (n > design_n) throw InvalidInputError("config: n exceeds design size");
    if (stages < 1) throw InvalidInputError("config: stages >= 1");
    if (!(eta >= 0.0)) throw InvalidInputError("config: eta >= 0");
  }
};

}  // namespace localgp
