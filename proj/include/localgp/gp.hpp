#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "localgp/errors.hpp"
#include "localgp/kernel.hpp"
#include "localgp/linalg.hpp"

namespace localgp {

/// Batch GP state on a sub-design: inverse correlation, K^{-1}Y, and the
/// quadratic form psi = Y' K^{-1} Y that the integrated likelihood and the
/// Student-t predictive scale share.
struct GpFit {
  std::vector<int> indices;  // design-row ids of the sub-design
  SpdInverse inv;
  Vector kinv_y;
  double psi = 0.0;
  Hyper h;
  RowMatrix x_sub;
  Vector y_sub;

  int j() const { return inv.dim; }
};

/// Student-t predictive summary at one location. variance = scale2 * j /
/// (j - 2) and is NaN when j < 3 (no second moment).
struct Prediction {
  double mean = 0.0;
  double scale2 = 0.0;
  int dof = 0;
  double variance = 0.0;
  double theta_hat = 0.0;
  int n_used = 0;
};

struct PredictDerivs {
  double dmu = 0.0;
  double d2mu = 0.0;
  double dV = 0.0;
  double d2V = 0.0;
};

struct MleResult {
  double theta_hat = 0.0;
  int iters = 0;
  bool converged = false;
  bool boundary = false;
};

/// Build a fit from scratch (Cholesky bootstrap). `capacity` preallocates
/// the inverse for later in-place extensions.
inline GpFit fit_gp(std::vector<int> indices, RowMatrix x_sub, Vector y_sub,
                    const Hyper& h, int capacity = 0) {
  if (x_sub.rows() != y_sub.size()) {
    throw DimensionError("fit_gp: X/Y row mismatch");
  }
  GpFit fit;
  fit.indices = std::move(indices);
  fit.h = h;
  fit.x_sub = std::move(x_sub);
  fit.y_sub = std::move(y_sub);
  const Matrix K = corr_matrix(fit.x_sub, h);
  fit.inv = spd_build(K, capacity);
  const int j = fit.inv.dim;
  fit.kinv_y.resize(j);
  fit.kinv_y.noalias() =
      fit.inv.view().selfadjointView<Eigen::Lower>() * fit.y_sub;
  fit.psi = fit.y_sub.dot(fit.kinv_y);
  return fit;
}

/// Integrated (tau^2-marginalized) log likelihood:
/// log Gamma(j/2) - (j/2) log(2 pi) - log|K|/2 - (j/2) log(psi/2).
inline double log_marginal(const GpFit& fit) {
  const int j = fit.j();
  if (j < 1) throw DimensionError("log_marginal: empty fit");
  if (!(fit.psi > 0.0)) {
    throw ConditioningError("log_marginal: psi <= 0");
  }
  return std::lgamma(0.5 * j) - 0.5 * j * std::log(2.0 * M_PI) -
         0.5 * fit.inv.logdet - 0.5 * j * std::log(0.5 * fit.psi);
}

/// First and second theta-derivative of log_marginal. With w = K^{-1}Y and
/// S = w' Kdot w:
///   l1 = -tr(K^{-1} Kdot)/2 + (j/2) S / psi
///   l2 = -[tr(K^{-1} Kddot) - tr(B B)]/2
///        + (j/(2 psi)) [w' Kddot w - 2 a' K^{-1} a] + (j/(2 psi^2)) S^2
/// where a = Kdot w and B = K^{-1} Kdot.
inline std::pair<double, double> loglik_dtheta(const GpFit& fit) {
  const int j = fit.j();
  if (j < 2) throw DimensionError("loglik_dtheta: need j >= 2");
  if (!(fit.psi > 0.0)) {
    throw ConditioningError("loglik_dtheta: psi <= 0");
  }
  Matrix dK, d2K;
  corr_matrix_dtheta(fit.x_sub, fit.h, dK, d2K);
  const auto Kinv = fit.inv.view();
  const Vector& w = fit.kinv_y;

  Vector a(j), b(j);
  a.noalias() = dK.selfadjointView<Eigen::Lower>() * w;
  b.noalias() = Kinv.selfadjointView<Eigen::Lower>() * a;
  const double S = w.dot(a);
  const double a_b = a.dot(b);
  Vector d2Kw(j);
  d2Kw.noalias() = d2K.selfadjointView<Eigen::Lower>() * w;
  const double w_d2K_w = w.dot(d2Kw);

  Matrix B(j, j);
  B.noalias() = Kinv.selfadjointView<Eigen::Lower>() * dK;
  const double tr_KiKd = trace_product(Kinv, dK);
  const double tr_BB = trace_product(B, B);
  const double tr_KiKdd = trace_product(Kinv, d2K);

  const double l1 = -0.5 * tr_KiKd + 0.5 * j * S / fit.psi;
  const double l2 = -0.5 * (tr_KiKdd - tr_BB) +
                    0.5 * j * (w_d2K_w - 2.0 * a_b) / fit.psi +
                    0.5 * j * S * S / (fit.psi * fit.psi);
  return {l1, l2};
}

/// Observed information F(theta) = -l''. May be negative far from the
/// mode; callers that need nonnegativity guard it themselves.
inline double fisher_info(const GpFit& fit) {
  return -loglik_dtheta(fit).second;
}

/// Student-t prediction (dof = j) at x.
inline Prediction predict(const GpFit& fit, ConstVecRef x) {
  const int j = fit.j();
  if (j < 1) throw DimensionError("predict: empty fit");
  const Vector k = cross_corr_vector(x, fit.x_sub, fit.h);
  Prediction out;
  out.mean = k.dot(fit.kinv_y);
  out.dof = j;
  out.n_used = j;
  out.theta_hat = fit.h.theta;
  Vector z(j);
  z.noalias() = fit.inv.view().selfadjointView<Eigen::Lower>() * k;
  double v = (1.0 + fit.h.eta) - k.dot(z);
  if (v < -1e-10) {
    throw ConditioningError("predict: negative predictive bracket");
  }
  if (v < 0.0) v = 0.0;
  out.scale2 = fit.psi * v / j;
  out.variance = (j > 2) ? fit.psi * v / (j - 2)
                         : std::numeric_limits<double>::quiet_NaN();
  return out;
}

/// theta-derivatives of the predictive mean and variance, via the z/w
/// chains: z = K^{-1}k, zd = K^{-1}(kd - Kd z), zdd = K^{-1}(kdd - Kdd z -
/// 2 Kd zd); w = K^{-1}Y, wd = -K^{-1} Kd w, wdd = -K^{-1}(Kdd w + 2 Kd
/// wd). Then mu-dots are z-dots against Y, and V = psi v / (j-2) expands
/// by the product rule with psi-dots = Y'w-dots and v = K(x,x) - k'z.
inline PredictDerivs predict_dtheta(const GpFit& fit, ConstVecRef x) {
  const int j = fit.j();
  if (j < 3) throw DimensionError("predict_dtheta: need j >= 3");
  Matrix dK, d2K;
  corr_matrix_dtheta(fit.x_sub, fit.h, dK, d2K);
  Vector k, kd, kdd;
  cross_corr_vector_dtheta(x, fit.x_sub, fit.h, k, kd, kdd);
  const auto Kinv = fit.inv.view();
  const auto KinvS = Kinv.selfadjointView<Eigen::Lower>();
  const auto dKS = dK.selfadjointView<Eigen::Lower>();
  const auto d2KS = d2K.selfadjointView<Eigen::Lower>();
  const Vector& w = fit.kinv_y;

  Vector z(j), zd(j), zdd(j), wd(j), wdd(j), t1(j), t2(j);
  z.noalias() = KinvS * k;
  t1.noalias() = dKS * z;
  t1 = kd - t1;
  zd.noalias() = KinvS * t1;
  t1.noalias() = d2KS * z;
  t2.noalias() = dKS * zd;
  t1 = kdd - t1 - 2.0 * t2;
  zdd.noalias() = KinvS * t1;
  t1.noalias() = dKS * w;
  wd.noalias() = KinvS * t1;
  wd = -wd;
  t1.noalias() = d2KS * w;
  t2.noalias() = dKS * wd;
  t1 += 2.0 * t2;
  wdd.noalias() = KinvS * t1;
  wdd = -wdd;

  const double psid = fit.y_sub.dot(wd);
  const double psidd = fit.y_sub.dot(wdd);
  const double v = (1.0 + fit.h.eta) - k.dot(z);
  const double vd = -(kd.dot(z) + k.dot(zd));
  const double vdd = -(kdd.dot(z) + 2.0 * kd.dot(zd) + k.dot(zdd));

  PredictDerivs out;
  out.dmu = zd.dot(fit.y_sub);
  out.d2mu = zdd.dot(fit.y_sub);
  out.dV = (psid * v + fit.psi * vd) / (j - 2);
  out.d2V = (psidd * v + 2.0 * psid * vd + fit.psi * vdd) / (j - 2);
  return out;
}

/// Safeguarded Newton ascent of log_marginal in theta on [lo, hi].
/// Converges on |l1| <= tol (1 + |l1 at start|) or a relative-theta step
/// below 1e-5; when l'' >= 0 or the Newton step leaves the sign-bracket, a
/// golden-ratio fraction into the bracket is taken instead. iters counts
/// derivative evaluations.
inline MleResult mle_theta(const GpFit& fit, double lo, double hi,
                           double tol = 1e-5, int max_iter = 50) {
  if (!(lo > 0.0) || !(hi > lo)) {
    throw InvalidInputError("mle_theta: bad bounds");
  }
  constexpr double kGolden = 0.3819660112501051;
  double theta = std::min(std::max(fit.h.theta, lo), hi);
  double a = lo, b = hi;
  double best_theta = theta;
  double best_ll = -std::numeric_limits<double>::infinity();
  double l1_ref = 0.0;

  for (int it = 1; it <= max_iter; ++it) {
    Hyper ht{theta, fit.h.eta};
    const GpFit trial = fit_gp(fit.indices, fit.x_sub, fit.y_sub, ht);
    const auto [l1, l2] = loglik_dtheta(trial);
    const double ll = log_marginal(trial);
    if (ll > best_ll) {
      best_ll = ll;
      best_theta = theta;
    }
    if (it == 1) l1_ref = std::abs(l1);
    if (std::abs(l1) <= tol * (1.0 + l1_ref)) {
      return {theta, it, true, false};
    }
    if (l1 > 0.0) {
      if (theta >= hi * (1.0 - 1e-12)) return {hi, it, true, true};
      a = theta;
    } else {
      if (theta <= lo * (1.0 + 1e-12)) return {lo, it, true, true};
      b = theta;
    }
    double next;
    bool newton_ok = l2 < 0.0;
    if (newton_ok) {
      next = theta - l1 / l2;
      if (!(next > a && next < b)) newton_ok = false;
    }
    if (!newton_ok) {
      next = (l1 > 0.0) ? theta + kGolden * (b - theta)
                        : theta - kGolden * (theta - a);
    }
    if (std::abs(next - theta) <= 1e-5 * theta) {
      // Step collapsed; a one-sided bracket means the optimum sits on the
      // untouched bound.
      if (l1 > 0.0 && b == hi) return {hi, it, true, true};
      if (l1 < 0.0 && a == lo) return {lo, it, true, true};
      return {next, it, true, false};
    }
    theta = next;
  }
  return {best_theta, max_iter, false, false};
}

}  // namespace localgp
