#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "localgp/config.hpp"
#include "localgp/design_set.hpp"
#include "localgp/errors.hpp"
#include "localgp/gp.hpp"
#include "localgp/kernel.hpp"
#include "localgp/knn.hpp"
#include "localgp/local.hpp"
#include "localgp/parallel.hpp"
#include "localgp/rng.hpp"

namespace localgp {

struct LocationRecord {
  Prediction pred;
  std::string status = "ok";
  int mle_iters = 0;  // summed over stages
  bool ok = true;
};

struct GlobalResult {
  std::vector<LocationRecord> records;  // one per grid row, input order
  Matrix theta_by_stage;  // m x stages, per-location theta-hat before smoothing
  Matrix theta_applied;   // m x stages, after smoothing (used downstream)
  double theta0 = 0.0;     // stage-1 start actually used
  double theta0_ref = 0.0;  // distance-quantile reference (also MLE bounds)
  std::vector<double> phase_seconds;  // one per stage, final entry = predict
  double total_seconds = 0.0;
  int failures = 0;
  int workers_used = 1;
};

/// Lengthscale default: a low quantile of pairwise squared distances in X,
/// from a seeded uniform subsample when N exceeds `subsample_max`.
inline double theta0_auto(const DesignSet& D, double quantile = 0.1,
                          std::uint64_t seed = 42, int subsample_max = 1000) {
  if (!(quantile > 0.0 && quantile < 1.0)) {
    throw InvalidInputError("theta0_auto: quantile must be in (0, 1)");
  }
  const int N = D.n();
  if (N < 2) throw InvalidInputError("theta0_auto: need at least two points");

  std::vector<int> idx(N);
  for (int i = 0; i < N; ++i) idx[i] = i;
  int m = N;
  if (N > subsample_max) {
    m = subsample_max;
    Rng rng(seed);
    for (int i = 0; i < m; ++i) {
      const int j =
          i + static_cast<int>(rng.below(static_cast<std::uint64_t>(N - i)));
      std::swap(idx[i], idx[j]);
    }
  }

  const int p = D.dim();
  std::vector<double> d2s;
  d2s.reserve(static_cast<std::size_t>(m) * (m - 1) / 2);
  for (int a = 0; a < m; ++a) {
    const double* xa =
        D.X().data() + static_cast<std::ptrdiff_t>(idx[a]) * p;
    for (int b = a + 1; b < m; ++b) {
      const double* xb =
          D.X().data() + static_cast<std::ptrdiff_t>(idx[b]) * p;
      d2s.push_back(detail::sq_dist_raw(xa, xb, p));
    }
  }
  std::sort(d2s.begin(), d2s.end());
  if (!(d2s.back() > 0.0)) {
    throw InvalidInputError("theta0_auto: all sampled points coincide");
  }
  const double pos = quantile * (static_cast<double>(d2s.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, d2s.size() - 1);
  double v = d2s[lo] + (pos - static_cast<double>(lo)) * (d2s[hi] - d2s[lo]);
  if (!(v > 0.0)) {
    // Duplicates dragged the quantile to zero; take the smallest positive
    // squared distance instead so theta stays usable.
    v = *std::upper_bound(d2s.begin(), d2s.end(), 0.0);
  }
  return v;
}

/// Gaussian-kernel average of log theta-hat over the k nearest predictive
/// locations (self included). bandwidth <= 0 selects, per location, the
/// distance to its k-th neighbor; a positive bandwidth is used as-is (in
/// coordinate distance units).
inline Vector smooth_theta(const RowMatrix& grid, ConstVecRef theta_hats,
                           int k = 12, double bandwidth = 0.0) {
  const int m = static_cast<int>(grid.rows());
  if (theta_hats.size() != m) {
    throw DimensionError("smooth_theta: grid/theta size mismatch");
  }
  if (k < 1) throw InvalidInputError("smooth_theta: k >= 1");
  for (int i = 0; i < m; ++i) {
    if (!(theta_hats(i) > 0.0) || !std::isfinite(theta_hats(i))) {
      throw InvalidInputError("smooth_theta: theta-hats must be positive");
    }
  }
  const int kk = std::min(k, m);
  Vector out(m);
  if (kk <= 1) {
    out = theta_hats;
    return out;
  }
  Vector logt(m);
  for (int i = 0; i < m; ++i) logt(i) = std::log(theta_hats(i));
  const KdTree tree(grid);
  std::vector<Neighbor> nbrs;
  for (int i = 0; i < m; ++i) {
    tree.query(grid.data() + static_cast<std::ptrdiff_t>(i) * grid.cols(),
               kk, nbrs);
    const double bw2 =
        bandwidth > 0.0 ? bandwidth * bandwidth : nbrs.back().d2;
    double num = 0.0, den = 0.0;
    if (!(bw2 > 0.0)) {
      // All kk locations coincide: plain average.
      for (const Neighbor& nb : nbrs) {
        num += logt(nb.id);
        den += 1.0;
      }
    } else {
      for (const Neighbor& nb : nbrs) {
        const double w = std::exp(-nb.d2 / bw2);
        num += w * logt(nb.id);
        den += w;
      }
    }
    out(i) = std::exp(num / den);
  }
  return out;
}

namespace detail {

inline std::string error_slug(const std::exception& e) {
  if (dynamic_cast<const ConditioningError*>(&e)) return "conditioning_error";
  if (dynamic_cast<const DesignStallError*>(&e)) return "design_stall";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension_error";
  if (dynamic_cast<const InvalidInputError*>(&e)) return "invalid_input";
  return "error";
}

inline Prediction sentinel_prediction(double theta) {
  Prediction p;
  p.mean = std::numeric_limits<double>::quiet_NaN();
  p.scale2 = std::numeric_limits<double>::quiet_NaN();
  p.variance = std::numeric_limits<double>::quiet_NaN();
  p.dof = 0;
  p.n_used = 0;
  p.theta_hat = theta;
  return p;
}

}  // namespace detail

/// Staged global emulation: per stage, each location independently runs
/// the greedy design at its current theta and (optionally) the local MLE;
/// the theta-hat field is then smoothed spatially. After the last stage
/// every location is refit at its final applied theta (optionally re-
/// selecting the design) and predicted. Per-location work depends only on
/// the location, the design set, and the config, and output slots are
/// preassigned, so results are identical for any worker count.
inline GlobalResult emulate(const RowMatrix& grid, const DesignSet& D,
                            const StageConfig& cfg) {
  cfg.validate(D.n());
  const int m = static_cast<int>(grid.rows());
  if (m < 1) throw InvalidInputError("emulate: empty grid");
  if (static_cast<int>(grid.cols()) != D.dim()) {
    throw DimensionError("emulate: grid/design dimension mismatch");
  }
  if (!grid.allFinite()) {
    throw InvalidInputError("emulate: non-finite grid coordinate");
  }
  if (cfg.method == Method::kMSPE && cfg.n0 < 3) {
    throw InvalidInputError("emulate: MSPE needs n0 >= 3");
  }

  using Clock = std::chrono::steady_clock;
  const auto run_start = Clock::now();
  const auto seconds_since = [](Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
  };

  GlobalResult R;
  R.workers_used = resolve_workers(cfg.workers);
  R.theta0_ref = theta0_auto(D, cfg.theta0_quantile, cfg.seed);
  R.theta0 = cfg.theta0 > 0.0 ? cfg.theta0 : R.theta0_ref;
  const double lo = 1e-3 * R.theta0_ref;
  const double hi = 1e3 * R.theta0_ref;
  R.records.resize(m);
  R.theta_by_stage.resize(m, cfg.stages);
  R.theta_applied.resize(m, cfg.stages);
  R.phase_seconds.reserve(cfg.stages + 1);

  Vector theta_in = Vector::Constant(m, R.theta0);
  std::vector<std::vector<int>> final_indices(m);

  for (int s = 0; s < cfg.stages; ++s) {
    const auto stage_start = Clock::now();
    const bool final_stage = (s == cfg.stages - 1);
    Vector theta_raw = theta_in;
    parallel_for(m, R.workers_used, [&](int begin, int end, int) {
      for (int i = begin; i < end; ++i) {
        LocationRecord& rec = R.records[i];
        if (!rec.ok) continue;
        try {
          const Vector x = grid.row(i).transpose();
          const Hyper h{theta_in(i), cfg.eta};
          LocalDesignResult des = local_design(x, D, cfg, h);
          GpFit fit = std::move(des.fit);
          if (cfg.estimate_theta) {
            LocalMleResult ml =
                local_mle(fit, lo, hi, cfg.mle_tol, cfg.mle_max_iter);
            theta_raw(i) = ml.theta_hat;
            rec.mle_iters += ml.iters;
            fit = std::move(ml.fit);
          }
          if (final_stage) final_indices[i] = std::move(fit.indices);
        } catch (const std::exception& e) {
          rec.ok = false;
          rec.status = detail::error_slug(e);
        }
      }
    });
    R.theta_by_stage.col(s) = theta_raw;
    Vector applied = theta_raw;
    if (cfg.estimate_theta && cfg.smooth.enabled) {
      applied =
          smooth_theta(grid, theta_raw, cfg.smooth.k, cfg.smooth.bandwidth);
    }
    R.theta_applied.col(s) = applied;
    theta_in = std::move(applied);
    R.phase_seconds.push_back(seconds_since(stage_start));
  }

  // Predict phase: refit every surviving location at its final theta.
  const auto predict_start = Clock::now();
  parallel_for(m, R.workers_used, [&](int begin, int end, int) {
    for (int i = begin; i < end; ++i) {
      LocationRecord& rec = R.records[i];
      const double th = theta_in(i);
      if (!rec.ok) {
        rec.pred = detail::sentinel_prediction(th);
        continue;
      }
      try {
        const Vector x = grid.row(i).transpose();
        const Hyper h{th, cfg.eta};
        GpFit fit;
        if (cfg.refit_after_smooth) {
          LocalDesignResult des = local_design(x, D, cfg, h);
          fit = std::move(des.fit);
        } else {
          const std::vector<int>& ids = final_indices[i];
          const int ni = static_cast<int>(ids.size());
          RowMatrix xs(ni, D.dim());
          Vector ys(ni);
          for (int r = 0; r < ni; ++r) {
            xs.row(r) = D.X().row(ids[r]);
            ys(r) = D.y(ids[r]);
          }
          fit = fit_gp(ids, std::move(xs), std::move(ys), h);
        }
        rec.pred = predict(fit, x);
      } catch (const std::exception& e) {
        rec.ok = false;
        rec.status = detail::error_slug(e);
        rec.pred = detail::sentinel_prediction(th);
      }
    }
  });
  R.phase_seconds.push_back(seconds_since(predict_start));

  for (const LocationRecord& rec : R.records) {
    if (!rec.ok) ++R.failures;
  }
  R.total_seconds = seconds_since(run_start);
  if (R.failures > 0.01 * m) {
    throw Error("emulate: " + std::to_string(R.failures) + " of " +
                std::to_string(m) + " locations failed (over 1%)");
  }
  return R;
}

}  // namespace localgp
