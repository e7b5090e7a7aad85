#pragma once

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "localgp/config.hpp"
#include "localgp/design_set.hpp"
#include "localgp/errors.hpp"
#include "localgp/global.hpp"
#include "localgp/gp.hpp"
#include "localgp/kernel.hpp"
#include "localgp/linalg.hpp"
#include "localgp/local.hpp"
#include "localgp/rng.hpp"

namespace localgp {

/// Two-humped 2-d test surface on [-2,2]^2: f = -w(x1) w(x2) with
/// w(v) = exp(-(v-1)^2) + exp(-0.8 (v+1)^2) - 0.05 sin(8 (v+0.1)).
inline double eval_gramacy2d(ConstVecRef x) {
  if (x.size() != 2) throw DimensionError("eval_gramacy2d: need 2-d input");
  const auto w = [](double v) {
    return std::exp(-(v - 1.0) * (v - 1.0)) +
           std::exp(-0.8 * (v + 1.0) * (v + 1.0)) -
           0.05 * std::sin(8.0 * (v + 0.1));
  };
  return -w(x(0)) * w(x(1));
}

inline void gramacy2d_domain(Vector& lo, Vector& hi) {
  lo = Vector::Constant(2, -2.0);
  hi = Vector::Constant(2, 2.0);
}

/// Uniform lattice over [-2,2]^2, row index = a * per_dim + b for
/// coordinates (g(a), g(b)).
inline RowMatrix gramacy2d_grid(int per_dim = 201) {
  if (per_dim < 2) throw InvalidInputError("gramacy2d_grid: per_dim >= 2");
  RowMatrix X(per_dim * per_dim, 2);
  const auto g = [per_dim](int k) {
    return -2.0 + 4.0 * static_cast<double>(k) /
                      static_cast<double>(per_dim - 1);
  };
  for (int a = 0; a < per_dim; ++a) {
    for (int b = 0; b < per_dim; ++b) {
      const int row = a * per_dim + b;
      X(row, 0) = g(a);
      X(row, 1) = g(b);
    }
  }
  return X;
}

/// Water-flow-through-a-borehole response; 8 inputs, all-positive output
/// on the standard domain.
inline double eval_borehole(ConstVecRef x) {
  if (x.size() != 8) throw DimensionError("eval_borehole: need 8-d input");
  const double rw = x(0), r = x(1), Tu = x(2), Tl = x(3);
  const double Hu = x(4), Hl = x(5), L = x(6), Kw = x(7);
  if (!(r > rw) || !(rw > 0.0)) {
    throw InvalidInputError("eval_borehole: need r > r_w > 0");
  }
  const double lr = std::log(r / rw);
  const double denom =
      lr * (1.0 + 2.0 * L * Tu / (lr * rw * rw * Kw) + Tu / Tl);
  return 2.0 * std::numbers::pi * Tu * (Hu - Hl) / denom;
}

inline void borehole_domain(Vector& lo, Vector& hi) {
  lo.resize(8);
  hi.resize(8);
  lo << 0.05, 100.0, 63070.0, 63.1, 990.0, 700.0, 1120.0, 9855.0;
  hi << 0.15, 5000.0, 115600.0, 116.0, 1110.0, 820.0, 1680.0, 12045.0;
}

/// Latin hypercube sample: per dimension, a seeded permutation assigns one
/// point to each stratum [i/n, (i+1)/n), jittered uniformly inside it.
/// Draw order (per dimension: shuffle, then n jitters) is part of the
/// stream contract.
inline RowMatrix lhs(int n, const Vector& lo, const Vector& hi,
                     std::uint64_t seed) {
  const int p = static_cast<int>(lo.size());
  if (n < 1) throw InvalidInputError("lhs: n >= 1");
  if (hi.size() != p) throw DimensionError("lhs: domain size mismatch");
  for (int d = 0; d < p; ++d) {
    if (!(hi(d) > lo(d))) throw InvalidInputError("lhs: need hi > lo");
  }
  Rng rng(seed);
  RowMatrix X(n, p);
  std::vector<int> perm(n);
  for (int d = 0; d < p; ++d) {
    for (int i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm.begin(), perm.end());
    for (int i = 0; i < n; ++i) {
      const double unit = (static_cast<double>(perm[i]) + rng.uniform()) /
                          static_cast<double>(n);
      X(i, d) = lo(d) + unit * (hi(d) - lo(d));
    }
  }
  return X;
}

inline RowMatrix to_unit_cube(const RowMatrix& X, const Vector& lo,
                              const Vector& hi) {
  RowMatrix U = X;
  for (int d = 0; d < X.cols(); ++d) {
    U.col(d) = (U.col(d).array() - lo(d)) / (hi(d) - lo(d));
  }
  return U;
}

inline RowMatrix from_unit_cube(const RowMatrix& U, const Vector& lo,
                                const Vector& hi) {
  RowMatrix X = U;
  for (int d = 0; d < U.cols(); ++d) {
    X.col(d) = lo(d) + X.col(d).array() * (hi(d) - lo(d));
  }
  return X;
}

struct MetricsReport {
  double rmse = 0.0;
  double sqrt_one_minus_nse = 0.0;
  double coverage95 = 0.0;
  double mean_sd = 0.0;
  double seconds = 0.0;
};

/// Pointwise accuracy/calibration summary. Coverage counts truths inside
/// the central 95% Student-t interval mean +- t_{0.975,dof} sqrt(scale2).
inline MetricsReport score(const std::vector<Prediction>& preds,
                           ConstVecRef truth) {
  const int n = static_cast<int>(truth.size());
  if (static_cast<int>(preds.size()) != n) {
    throw DimensionError("score: prediction/truth length mismatch");
  }
  if (n < 2) throw InvalidInputError("score: need at least two points");
  const double mean_t = truth.mean();
  double ss_t = 0.0, sse = 0.0, sd_sum = 0.0;
  int covered = 0;
  std::map<int, double> t975;
  for (int i = 0; i < n; ++i) {
    const Prediction& p = preds[i];
    const double err = p.mean - truth(i);
    sse += err * err;
    ss_t += (truth(i) - mean_t) * (truth(i) - mean_t);
    sd_sum += std::sqrt(p.variance);
    if (p.dof < 1) throw InvalidInputError("score: prediction with dof < 1");
    auto it = t975.find(p.dof);
    if (it == t975.end()) {
      const boost::math::students_t_distribution<double> dist(p.dof);
      it = t975.emplace(p.dof, boost::math::quantile(dist, 0.975)).first;
    }
    const double hw = it->second * std::sqrt(p.scale2);
    if (truth(i) >= p.mean - hw && truth(i) <= p.mean + hw) ++covered;
  }
  if (!(ss_t > 0.0)) {
    throw InvalidInputError("score: zero response variance, NSE undefined");
  }
  MetricsReport m;
  m.rmse = std::sqrt(sse / n);
  m.sqrt_one_minus_nse = std::sqrt(sse / ss_t);
  m.coverage95 = static_cast<double>(covered) / n;
  m.mean_sd = sd_sum / n;
  return m;
}

/// Normalized conditioning trajectory kappa(K_j)/j^2 along the greedy
/// design path at x, j = n0..n.
inline std::vector<double> condition_trace(ConstVecRef x, const DesignSet& D,
                                           const StageConfig& cfg) {
  const double theta = cfg.theta0 > 0.0
                           ? cfg.theta0
                           : theta0_auto(D, cfg.theta0_quantile, cfg.seed);
  const Hyper h{theta, cfg.eta};
  const LocalDesignResult r = local_design(x, D, cfg, h);
  std::vector<double> out;
  out.reserve(cfg.n - cfg.n0 + 1);
  RowMatrix xs(cfg.n, D.dim());
  for (int i = 0; i < cfg.n; ++i) xs.row(i) = D.X().row(r.fit.indices[i]);
  for (int j = cfg.n0; j <= cfg.n; ++j) {
    const RowMatrix head = xs.topRows(j);
    const Matrix K = corr_matrix(head, h);
    out.push_back(condition_number(K) / (static_cast<double>(j) * j));
  }
  return out;
}

/// Study-protocol base config per problem. Both studies share the
/// n0 = 6, n = 50, N' = 1000 defaults, but the borehole runs fed the raw
/// per-location theta-hats straight into their second stage: its 500
/// scattered 8-d test sites have no close neighbours to borrow strength
/// from, so knn smoothing would average over genuinely different
/// lengthscales. The dense 2-d predictive grid smooths between stages.
inline StageConfig bench_base(const std::string& problem) {
  if (problem != "gramacy2d" && problem != "borehole") {
    throw InvalidInputError("unknown bench problem: " + problem);
  }
  StageConfig cfg;
  cfg.smooth.enabled = (problem == "gramacy2d");
  return cfg;
}

/// Named benchmark variants: a trailing "2" runs two stages, ".nomle"
/// pins theta at theta0, "nnbig" is NN with n = 200.
inline StageConfig bench_config(const StageConfig& base,
                                const std::string& name) {
  StageConfig cfg = base;
  cfg.stages = 1;
  cfg.estimate_theta = true;
  if (name == "nn") {
    cfg.method = Method::kNN;
  } else if (name == "nn.nomle") {
    cfg.method = Method::kNN;
    cfg.estimate_theta = false;
  } else if (name == "nnbig") {
    cfg.method = Method::kNN;
    cfg.n = 200;
  } else if (name == "alc") {
    cfg.method = Method::kALC;
  } else if (name == "alc2") {
    cfg.method = Method::kALC;
    cfg.stages = 2;
  } else if (name == "alc.nomle") {
    cfg.method = Method::kALC;
    cfg.estimate_theta = false;
  } else if (name == "mspe") {
    cfg.method = Method::kMSPE;
  } else if (name == "mspe2") {
    cfg.method = Method::kMSPE;
    cfg.stages = 2;
  } else if (name == "mspe.nomle") {
    cfg.method = Method::kMSPE;
    cfg.estimate_theta = false;
  } else {
    throw InvalidInputError("unknown bench method: " + name);
  }
  if (cfg.close < cfg.n) cfg.close = cfg.n;
  return cfg;
}

/// One rep's train/test material, already on the emulation scale; `truth`
/// is evaluated on the raw scale.
struct BenchData {
  RowMatrix x_design;
  Vector y_design;
  RowMatrix x_test;
  Vector truth;
};

/// Per-rep seed streams; the test stream is offset so train and test draws
/// never overlap for any rep.
inline std::uint64_t bench_train_seed(std::uint64_t seed, int rep) {
  return seed * 1000003ULL + static_cast<std::uint64_t>(rep);
}
inline std::uint64_t bench_test_seed(std::uint64_t seed, int rep) {
  return bench_train_seed(seed, rep) + 500009ULL;
}

/// Fixed lattice design, LHS test set.
inline BenchData bench_data_gramacy2d(int per_dim, int n_test,
                                      std::uint64_t test_seed) {
  BenchData d;
  d.x_design = gramacy2d_grid(per_dim);
  d.y_design.resize(d.x_design.rows());
  for (int i = 0; i < d.x_design.rows(); ++i) {
    d.y_design(i) = eval_gramacy2d(d.x_design.row(i).transpose());
  }
  Vector lo, hi;
  gramacy2d_domain(lo, hi);
  d.x_test = lhs(n_test, lo, hi, test_seed);
  d.truth.resize(n_test);
  for (int i = 0; i < n_test; ++i) {
    d.truth(i) = eval_gramacy2d(d.x_test.row(i).transpose());
  }
  return d;
}

/// LHS train and test sets, coded to the unit cube for emulation and
/// decoded to the raw ranges only inside the response evaluation.
inline BenchData bench_data_borehole(int n_train, int n_pred,
                                     std::uint64_t train_seed,
                                     std::uint64_t test_seed) {
  Vector lo, hi;
  borehole_domain(lo, hi);
  const Vector unit_lo = Vector::Zero(8);
  const Vector unit_hi = Vector::Ones(8);
  BenchData d;
  d.x_design = lhs(n_train, unit_lo, unit_hi, train_seed);
  const RowMatrix raw_train = from_unit_cube(d.x_design, lo, hi);
  d.y_design.resize(n_train);
  for (int i = 0; i < n_train; ++i) {
    d.y_design(i) = eval_borehole(raw_train.row(i).transpose());
  }
  d.x_test = lhs(n_pred, unit_lo, unit_hi, test_seed);
  const RowMatrix raw_test = from_unit_cube(d.x_test, lo, hi);
  d.truth.resize(n_pred);
  for (int i = 0; i < n_pred; ++i) {
    d.truth(i) = eval_borehole(raw_test.row(i).transpose());
  }
  return d;
}

/// Emulate the test locations with one configured method and score them.
inline MetricsReport bench_run(const BenchData& data,
                               const StageConfig& cfg) {
  DesignSet D(data.x_design, data.y_design);
  const GlobalResult R = emulate(data.x_test, D, cfg);
  std::vector<Prediction> preds;
  preds.reserve(R.records.size());
  for (const LocationRecord& rec : R.records) preds.push_back(rec.pred);
  MetricsReport m = score(preds, data.truth);
  m.seconds = R.total_seconds;
  return m;
}

}  // namespace localgp
