// Global driver: theta0 selection, theta-field smoothing, and the staged
// multi-location emulation loop.
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>
#include <vector>

#include "localgp/localgp.hpp"
#include "oracle_helpers.hpp"

namespace {

using localgp::DesignSet;
using localgp::Hyper;
using localgp::Method;
using localgp::RowMatrix;
using localgp::StageConfig;
using localgp::Vector;

DesignSet make_design(std::mt19937_64& gen, int n, int p, double lo,
                      double hi) {
  RowMatrix X = oracle::random_design(gen, n, p, lo, hi);
  Vector y = oracle::toy_responses(X);
  return DesignSet(std::move(X), std::move(y));
}

// Exact all-pairs interpolated quantile of squared distances.
double quantile_oracle(const RowMatrix& X, double q) {
  std::vector<double> d2s;
  const int n = static_cast<int>(X.rows());
  d2s.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      d2s.push_back((X.row(a) - X.row(b)).squaredNorm());
    }
  }
  std::sort(d2s.begin(), d2s.end());
  const double pos = q * (static_cast<double>(d2s.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, d2s.size() - 1);
  return d2s[lo] + (pos - static_cast<double>(lo)) * (d2s[hi] - d2s[lo]);
}

TEST(Theta0Auto, TwoPointsAndExactSmallSample) {
  RowMatrix X(2, 2);
  X << 0.0, 0.0, 3.0, 0.0;
  DesignSet two(std::move(X), Vector::Zero(2));
  EXPECT_DOUBLE_EQ(localgp::theta0_auto(two, 0.1), 9.0);
  EXPECT_DOUBLE_EQ(localgp::theta0_auto(two, 0.9), 9.0);

  // Below the subsample cap the quantile is exact over all pairs.
  std::mt19937_64 gen(12);
  RowMatrix Xg = oracle::random_design(gen, 121, 2, 0.0, 1.0);
  const double want = quantile_oracle(Xg, 0.1);
  DesignSet D(std::move(Xg), Vector::Zero(121));
  EXPECT_LE(oracle::rel_err(localgp::theta0_auto(D, 0.1), want), 1e-12);
}

TEST(Theta0Auto, SubsampleTracksExactQuantileAndIsSeeded) {
  std::mt19937_64 gen(13);
  RowMatrix X = oracle::random_design(gen, 2000, 2, -1.0, 1.0);
  const double exact = quantile_oracle(X, 0.1);
  DesignSet D(std::move(X), Vector::Zero(2000));
  const double got = localgp::theta0_auto(D, 0.1, 42);
  EXPECT_LE(std::abs(got - exact) / exact, 0.10);
  EXPECT_DOUBLE_EQ(localgp::theta0_auto(D, 0.1, 42), got);
}

TEST(Theta0Auto, DegenerateInputs) {
  RowMatrix one(1, 2);
  one << 0.0, 0.0;
  DesignSet d1(std::move(one), Vector::Zero(1));
  EXPECT_THROW(localgp::theta0_auto(d1, 0.1), localgp::InvalidInputError);

  RowMatrix same = RowMatrix::Zero(5, 2);
  DesignSet d2(std::move(same), Vector::Zero(5));
  EXPECT_THROW(localgp::theta0_auto(d2, 0.1), localgp::InvalidInputError);

  std::mt19937_64 gen(7);
  RowMatrix X = oracle::random_design(gen, 10, 2, -1.0, 1.0);
  DesignSet D(std::move(X), Vector::Zero(10));
  EXPECT_THROW(localgp::theta0_auto(D, 0.0), localgp::InvalidInputError);
  EXPECT_THROW(localgp::theta0_auto(D, 1.0), localgp::InvalidInputError);

  // Duplicates drag the low quantile to zero; the smallest positive
  // squared distance is used instead.
  RowMatrix Xd(4, 1);
  Xd << 0.0, 0.0, 0.0, 1.0;
  DesignSet dd(std::move(Xd), Vector::Zero(4));
  EXPECT_DOUBLE_EQ(localgp::theta0_auto(dd, 0.1), 1.0);
}

TEST(SmoothTheta, ConstantFieldAndKOneIdentity) {
  std::mt19937_64 gen(3);
  RowMatrix grid = oracle::random_design(gen, 40, 2, -1.0, 1.0);
  Vector same = Vector::Constant(40, 0.37);
  Vector sm = localgp::smooth_theta(grid, same, 12, 0.0);
  for (int i = 0; i < 40; ++i) {
    EXPECT_LE(oracle::rel_err(sm(i), 0.37), 1e-14);
  }

  Vector varied(40);
  for (int i = 0; i < 40; ++i) varied(i) = 0.1 + 0.01 * i;
  Vector k1 = localgp::smooth_theta(grid, varied, 1, 0.0);
  for (int i = 0; i < 40; ++i) EXPECT_DOUBLE_EQ(k1(i), varied(i));
}

TEST(SmoothTheta, DampsIsolatedSpike) {
  RowMatrix grid(21, 1);
  for (int i = 0; i < 21; ++i) grid(i, 0) = static_cast<double>(i);
  Vector th = Vector::Constant(21, 1.0);
  th(10) = 100.0;
  Vector sm = localgp::smooth_theta(grid, th, 5, 0.0);

  // The spike collapses by far more than half (log-space averaging) and
  // bleeds outward monotonically; everything stays inside the data range.
  EXPECT_LT(sm(10), 10.0);
  EXPECT_GT(sm(10), 1.0);
  EXPECT_GT(sm(10), sm(9));
  EXPECT_GT(sm(9), sm(8));
  for (int i = 0; i < 21; ++i) {
    EXPECT_GE(sm(i), 1.0 - 1e-12);
    EXPECT_LE(sm(i), 100.0 + 1e-9);
  }
  // Fixed positive bandwidth is honored (wider kernel -> flatter field).
  Vector wide = localgp::smooth_theta(grid, th, 5, 50.0);
  EXPECT_LT(wide(10), sm(10));
}

TEST(SmoothTheta, ValidatesInput) {
  RowMatrix grid(10, 1);
  for (int i = 0; i < 10; ++i) grid(i, 0) = static_cast<double>(i);
  Vector th = Vector::Constant(10, 1.0);

  Vector short_th = Vector::Constant(9, 1.0);
  EXPECT_THROW(localgp::smooth_theta(grid, short_th, 5, 0.0),
               localgp::DimensionError);
  EXPECT_THROW(localgp::smooth_theta(grid, th, 0, 0.0),
               localgp::InvalidInputError);
  Vector bad = th;
  bad(3) = 0.0;
  EXPECT_THROW(localgp::smooth_theta(grid, bad, 5, 0.0),
               localgp::InvalidInputError);
  bad(3) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(localgp::smooth_theta(grid, bad, 5, 0.0),
               localgp::InvalidInputError);

  // k beyond the grid size clamps instead of failing.
  Vector clamped = localgp::smooth_theta(grid, th, 50, 0.0);
  for (int i = 0; i < 10; ++i) EXPECT_TRUE(std::isfinite(clamped(i)));
}

TEST(Emulate, InterpolatesAtDesignSitesAndReportsShapes) {
  std::mt19937_64 gen(71);
  // Space-filling sites (as real computer experiments use): the tiny
  // nugget below needs a separation floor to keep the LLT solvable.
  RowMatrix Xg = oracle::jittered_grid_2d(gen, 100, -1.0, 1.0);
  Vector yg = oracle::toy_responses(Xg);
  DesignSet D(std::move(Xg), std::move(yg));
  RowMatrix grid(10, 2);
  for (int i = 0; i < 10; ++i) grid.row(i) = D.X().row(7 * i + 3);

  StageConfig cfg;
  cfg.method = Method::kALC;
  cfg.n0 = 6;
  cfg.n = 20;
  cfg.close = 100;
  cfg.stages = 1;
  cfg.estimate_theta = false;
  cfg.smooth.enabled = false;
  cfg.eta = 1e-10;
  cfg.theta0 = 0.2;
  cfg.workers = 1;

  localgp::GlobalResult R = localgp::emulate(grid, D, cfg);
  ASSERT_EQ(R.records.size(), 10u);
  EXPECT_EQ(R.failures, 0);
  EXPECT_EQ(R.theta_by_stage.rows(), 10);
  EXPECT_EQ(R.theta_by_stage.cols(), 1);
  EXPECT_EQ(R.theta_applied.cols(), 1);
  ASSERT_EQ(R.phase_seconds.size(), 2u);  // one stage + predict
  EXPECT_GT(R.theta0_ref, 0.0);
  EXPECT_DOUBLE_EQ(R.theta0, 0.2);
  EXPECT_GE(R.workers_used, 1);

  for (int i = 0; i < 10; ++i) {
    const auto& rec = R.records[i];
    EXPECT_EQ(rec.status, "ok");
    const double want = D.y(7 * i + 3);
    EXPECT_LE(std::abs(rec.pred.mean - want), 1e-6 * std::max(1.0, want));
    EXPECT_LE(rec.pred.scale2, 1e-6);
    EXPECT_EQ(rec.pred.n_used, 20);
    EXPECT_EQ(rec.pred.dof, 20);
    EXPECT_DOUBLE_EQ(rec.pred.theta_hat, 0.2);
  }
}

TEST(Emulate, OutputIndependentOfWorkerCount) {
  std::mt19937_64 gen(72);
  DesignSet D = make_design(gen, 600, 2, -1.0, 1.0);
  RowMatrix grid = oracle::random_design(gen, 30, 2, -0.8, 0.8);

  StageConfig cfg;
  cfg.method = Method::kALC;
  cfg.n0 = 6;
  cfg.n = 25;
  cfg.close = 100;
  cfg.stages = 2;
  cfg.workers = 1;
  auto a = localgp::emulate(grid, D, cfg);
  cfg.workers = 3;
  auto b = localgp::emulate(grid, D, cfg);

  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_DOUBLE_EQ(a.records[i].pred.mean, b.records[i].pred.mean);
    EXPECT_DOUBLE_EQ(a.records[i].pred.scale2, b.records[i].pred.scale2);
    EXPECT_DOUBLE_EQ(a.records[i].pred.variance, b.records[i].pred.variance);
    EXPECT_DOUBLE_EQ(a.records[i].pred.theta_hat,
                     b.records[i].pred.theta_hat);
    EXPECT_EQ(a.records[i].status, b.records[i].status);
  }
  for (int i = 0; i < a.theta_applied.rows(); ++i) {
    for (int s = 0; s < a.theta_applied.cols(); ++s) {
      EXPECT_DOUBLE_EQ(a.theta_applied(i, s), b.theta_applied(i, s));
    }
  }
}

TEST(Emulate, LocationsAreIndependentWithoutSmoothing) {
  std::mt19937_64 gen(73);
  DesignSet D = make_design(gen, 500, 2, -1.0, 1.0);
  RowMatrix grid10 = oracle::random_design(gen, 10, 2, -0.8, 0.8);
  RowMatrix grid5 = grid10.topRows(5);

  StageConfig cfg;
  cfg.method = Method::kALC;
  cfg.n0 = 6;
  cfg.n = 20;
  cfg.close = 80;
  cfg.stages = 2;
  cfg.smooth.enabled = false;  // smoothing couples locations by design
  cfg.workers = 1;

  auto a = localgp::emulate(grid10, D, cfg);
  auto b = localgp::emulate(grid5, D, cfg);
  for (int i = 0; i < 5; ++i) {
    EXPECT_DOUBLE_EQ(a.records[i].pred.mean, b.records[i].pred.mean);
    EXPECT_DOUBLE_EQ(a.records[i].pred.scale2, b.records[i].pred.scale2);
    EXPECT_DOUBLE_EQ(a.records[i].pred.theta_hat,
                     b.records[i].pred.theta_hat);
  }
}

TEST(Emulate, FailureHandlingBelowAndAboveTheAggregateLimit) {
  // A far-off stack of identical rows stalls any location whose candidate
  // window sees only copies (zero nugget). One stalled location out of 200
  // stays under the 1% limit and is reported in its record.
  std::mt19937_64 gen(74);
  RowMatrix X(230, 2);
  X.topRows(200) = oracle::random_design(gen, 200, 2, -1.0, 1.0);
  for (int i = 200; i < 230; ++i) X.row(i) << 50.0, 50.0;
  Vector y = oracle::toy_responses(X);
  DesignSet D(std::move(X), std::move(y));

  RowMatrix grid(200, 2);
  grid.topRows(199) = oracle::random_design(gen, 199, 2, -0.9, 0.9);
  grid.row(199) << 50.0, 50.0;

  StageConfig cfg;
  cfg.method = Method::kALC;
  cfg.n0 = 1;
  cfg.n = 10;
  cfg.close = 25;
  cfg.stages = 1;
  cfg.estimate_theta = false;
  cfg.smooth.enabled = false;
  cfg.eta = 0.0;
  cfg.theta0 = 0.5;
  cfg.workers = 1;

  auto R = localgp::emulate(grid, D, cfg);
  EXPECT_EQ(R.failures, 1);
  EXPECT_EQ(R.records[199].status, "design_stall");
  EXPECT_FALSE(R.records[199].ok);
  EXPECT_TRUE(std::isnan(R.records[199].pred.mean));
  EXPECT_EQ(R.records[198].status, "ok");

  // Five of five locations failing blows the 1% aggregate limit.
  RowMatrix Xs(10, 2);
  Xs.topRows(9) = RowMatrix::Zero(9, 2);
  Xs.row(9) << 1.0, 1.0;
  DesignSet Ds(std::move(Xs), Vector::Constant(10, 2.0));
  RowMatrix gs = oracle::random_design(gen, 5, 2, -0.5, 0.5);
  StageConfig bad = cfg;
  bad.n0 = 1;
  bad.n = 3;
  bad.close = 10;
  EXPECT_THROW(localgp::emulate(gs, Ds, bad), localgp::Error);
}

TEST(Emulate, RefitAfterSmoothMatchesSavedIndicesAtFixedTheta) {
  // With a single stage and no MLE the applied theta never moves, so
  // re-running the selection must land on the same design and fit.
  std::mt19937_64 gen(75);
  DesignSet D = make_design(gen, 400, 2, -1.0, 1.0);
  RowMatrix grid = oracle::random_design(gen, 12, 2, -0.8, 0.8);

  StageConfig cfg;
  cfg.method = Method::kALC;
  cfg.n0 = 6;
  cfg.n = 20;
  cfg.close = 80;
  cfg.stages = 1;
  cfg.estimate_theta = false;
  cfg.theta0 = 0.4;
  cfg.workers = 1;
  cfg.refit_after_smooth = false;
  auto a = localgp::emulate(grid, D, cfg);
  cfg.refit_after_smooth = true;
  auto b = localgp::emulate(grid, D, cfg);

  for (int i = 0; i < 12; ++i) {
    EXPECT_DOUBLE_EQ(a.records[i].pred.mean, b.records[i].pred.mean);
    EXPECT_DOUBLE_EQ(a.records[i].pred.scale2, b.records[i].pred.scale2);
  }
}

TEST(Emulate, StagedEstimationKeepsThetaInsideBounds) {
  RowMatrix X = localgp::gramacy2d_grid(41);
  Vector y(X.rows());
  for (int i = 0; i < X.rows(); ++i) {
    y(i) = localgp::eval_gramacy2d(X.row(i).transpose());
  }
  DesignSet D(std::move(X), std::move(y));
  std::mt19937_64 gen(76);
  RowMatrix grid = oracle::random_design(gen, 20, 2, -1.8, 1.8);

  StageConfig cfg;
  cfg.method = Method::kALC;
  cfg.n0 = 6;
  cfg.n = 30;
  cfg.close = 300;
  cfg.stages = 2;
  cfg.workers = 1;
  auto R = localgp::emulate(grid, D, cfg);

  const double lo = 1e-3 * R.theta0_ref;
  const double hi = 1e3 * R.theta0_ref;
  int moved = 0;
  for (int i = 0; i < 20; ++i) {
    EXPECT_EQ(R.records[i].status, "ok");
    EXPECT_GT(R.records[i].mle_iters, 0);
    for (int s = 0; s < 2; ++s) {
      EXPECT_GE(R.theta_applied(i, s), lo * (1.0 - 1e-12));
      EXPECT_LE(R.theta_applied(i, s), hi * (1.0 + 1e-12));
      EXPECT_TRUE(std::isfinite(R.theta_applied(i, s)));
    }
    if (R.theta_by_stage(i, 1) != R.theta_by_stage(i, 0)) ++moved;
    EXPECT_DOUBLE_EQ(R.records[i].pred.theta_hat, R.theta_applied(i, 1));
  }
  EXPECT_GE(moved, 1);
}

TEST(Emulate, ValidatesGridAgainstDesign) {
  std::mt19937_64 gen(77);
  DesignSet D = make_design(gen, 50, 2, -1.0, 1.0);
  StageConfig cfg;
  cfg.n = 20;
  cfg.close = 50;

  RowMatrix empty(0, 2);
  EXPECT_THROW(localgp::emulate(empty, D, cfg), localgp::InvalidInputError);
  RowMatrix wrong = oracle::random_design(gen, 5, 3, -1.0, 1.0);
  EXPECT_THROW(localgp::emulate(wrong, D, cfg), localgp::DimensionError);
  RowMatrix nonfinite = oracle::random_design(gen, 5, 2, -1.0, 1.0);
  nonfinite(2, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(localgp::emulate(nonfinite, D, cfg),
               localgp::InvalidInputError);
}

TEST(Emulate, ParallelSpeedupWhenHardwareAllows) {
  if (std::thread::hardware_concurrency() < 2) {
    GTEST_SKIP() << "single-core environment: speedup not measurable";
  }
  std::mt19937_64 gen(78);
  DesignSet D = make_design(gen, 2000, 2, -1.0, 1.0);
  RowMatrix grid = oracle::random_design(gen, 120, 2, -0.9, 0.9);

  StageConfig cfg;
  cfg.method = Method::kALC;
  cfg.n0 = 6;
  cfg.n = 40;
  cfg.close = 500;
  cfg.stages = 1;
  cfg.workers = 1;
  auto t0 = std::chrono::steady_clock::now();
  auto a = localgp::emulate(grid, D, cfg);
  const double serial =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  cfg.workers = static_cast<int>(std::thread::hardware_concurrency());
  t0 = std::chrono::steady_clock::now();
  auto b = localgp::emulate(grid, D, cfg);
  const double parallel =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  EXPECT_EQ(a.failures, b.failures);
  EXPECT_LT(parallel, serial * 1.10)
      << "multi-worker run should not be meaningfully slower";
}

}  // namespace
