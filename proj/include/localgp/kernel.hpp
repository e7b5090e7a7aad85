#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "localgp/errors.hpp"

namespace localgp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
/// Point sets are stored row-per-point; row-major keeps a point contiguous.
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstVecRef = Eigen::Ref<const Vector>;
using ConstMatRef = Eigen::Ref<const Matrix>;

/// Correlation hyperparameters: lengthscale theta (squared-distance units)
/// and nugget eta. eta is held fixed throughout design and MLE.
struct Hyper {
  double theta = 1.0;
  double eta = 1e-6;

  bool valid() const {
    return std::isfinite(theta) && theta > 0.0 && std::isfinite(eta) &&
           eta >= 0.0;
  }
};

inline constexpr double kDefaultNugget = 1e-6;

namespace detail {

inline double sq_dist_raw(const double* a, const double* b, int p) {
  double d2 = 0.0;
  for (int k = 0; k < p; ++k) {
    const double diff = a[k] - b[k];
    d2 += diff * diff;
  }
  return d2;
}

inline bool exact_equal_raw(const double* a, const double* b, int p) {
  for (int k = 0; k < p; ++k) {
    if (a[k] != b[k]) return false;
  }
  return true;
}

/// Correlation from a precomputed squared distance. The nugget rides on
/// exact coordinate identity, which is the only way d2 == 0 arises for
/// non-degenerate inputs; callers that must distinguish underflowed
/// near-duplicates check equality themselves.
inline double corr_given(double d2, bool same_point, const Hyper& h) {
  double k = std::exp(-d2 / h.theta);
  if (same_point) k += h.eta;
  return k;
}

/// d(corr)/d(theta) and d^2(corr)/d(theta)^2 from a squared distance.
/// The nugget is theta-free, so both vanish at d2 == 0.
inline void corr_dtheta_given(double d2, const Hyper& h, double& dk,
                              double& d2k) {
  const double k0 = std::exp(-d2 / h.theta);
  const double r = d2 / (h.theta * h.theta);
  dk = k0 * r;
  d2k = k0 * (r * r - 2.0 * d2 / (h.theta * h.theta * h.theta));
}

}  // namespace detail

inline double sq_dist(ConstVecRef a, ConstVecRef b) {
  if (a.size() != b.size()) {
    throw DimensionError("sq_dist: point dimensions differ");
  }
  return detail::sq_dist_raw(a.data(), b.data(), static_cast<int>(a.size()));
}

/// K(x, x') = exp(-||x-x'||^2 / theta) + eta * [x == x' exactly].
inline double corr(ConstVecRef x, ConstVecRef x_prime, const Hyper& h) {
  if (!h.valid()) throw InvalidInputError("corr: invalid hyperparameters");
  if (x.size() != x_prime.size()) {
    throw DimensionError("corr: point dimensions differ");
  }
  if (!x.allFinite() || !x_prime.allFinite()) {
    throw InvalidInputError("corr: non-finite coordinate");
  }
  const int p = static_cast<int>(x.size());
  const double d2 = detail::sq_dist_raw(x.data(), x_prime.data(), p);
  const bool same = detail::exact_equal_raw(x.data(), x_prime.data(), p);
  return detail::corr_given(d2, same, h);
}

/// First and second theta-derivative of corr at the same arguments.
inline void corr_dtheta(ConstVecRef x, ConstVecRef x_prime, const Hyper& h,
                        double& dk, double& d2k) {
  if (!h.valid()) {
    throw InvalidInputError("corr_dtheta: invalid hyperparameters");
  }
  if (x.size() != x_prime.size()) {
    throw DimensionError("corr_dtheta: point dimensions differ");
  }
  if (!x.allFinite() || !x_prime.allFinite()) {
    throw InvalidInputError("corr_dtheta: non-finite coordinate");
  }
  const double d2 = detail::sq_dist_raw(x.data(), x_prime.data(),
                                        static_cast<int>(x.size()));
  detail::corr_dtheta_given(d2, h, dk, d2k);
}

/// k_j(x): correlations between one point and each row of X_sub.
inline Vector cross_corr_vector(ConstVecRef x, const RowMatrix& X_sub,
                                const Hyper& h) {
  if (!h.valid()) {
    throw InvalidInputError("cross_corr_vector: invalid hyperparameters");
  }
  const int j = static_cast<int>(X_sub.rows());
  const int p = static_cast<int>(X_sub.cols());
  if (j > 0 && x.size() != p) {
    throw DimensionError("cross_corr_vector: dimension mismatch");
  }
  Vector k(j);
  for (int i = 0; i < j; ++i) {
    const double* row = X_sub.data() + static_cast<std::ptrdiff_t>(i) * p;
    const double d2 = detail::sq_dist_raw(x.data(), row, p);
    const bool same = detail::exact_equal_raw(x.data(), row, p);
    k(i) = detail::corr_given(d2, same, h);
  }
  return k;
}

/// k_j(x) plus its first and second theta-derivative vectors.
inline void cross_corr_vector_dtheta(ConstVecRef x, const RowMatrix& X_sub,
                                     const Hyper& h, Vector& k, Vector& dk,
                                     Vector& d2k) {
  const int j = static_cast<int>(X_sub.rows());
  const int p = static_cast<int>(X_sub.cols());
  if (j > 0 && x.size() != p) {
    throw DimensionError("cross_corr_vector_dtheta: dimension mismatch");
  }
  k.resize(j);
  dk.resize(j);
  d2k.resize(j);
  for (int i = 0; i < j; ++i) {
    const double* row = X_sub.data() + static_cast<std::ptrdiff_t>(i) * p;
    const double d2 = detail::sq_dist_raw(x.data(), row, p);
    const bool same = detail::exact_equal_raw(x.data(), row, p);
    k(i) = detail::corr_given(d2, same, h);
    detail::corr_dtheta_given(d2, h, dk(i), d2k(i));
  }
}

/// Full j x j correlation matrix over a point set. Symmetric by
/// construction; positive definite for distinct points when eta > 0.
inline Matrix corr_matrix(const RowMatrix& X_sub, const Hyper& h) {
  if (!h.valid()) {
    throw InvalidInputError("corr_matrix: invalid hyperparameters");
  }
  if (!X_sub.allFinite()) {
    throw InvalidInputError("corr_matrix: non-finite coordinate");
  }
  const int j = static_cast<int>(X_sub.rows());
  const int p = static_cast<int>(X_sub.cols());
  Matrix K(j, j);
  for (int c = 0; c < j; ++c) {
    K(c, c) = 1.0 + h.eta;
    const double* xc = X_sub.data() + static_cast<std::ptrdiff_t>(c) * p;
    for (int r = c + 1; r < j; ++r) {
      const double* xr = X_sub.data() + static_cast<std::ptrdiff_t>(r) * p;
      const double d2 = detail::sq_dist_raw(xr, xc, p);
      const bool same = detail::exact_equal_raw(xr, xc, p);
      const double v = detail::corr_given(d2, same, h);
      K(r, c) = v;
      K(c, r) = v;
    }
  }
  return K;
}

/// dK/dtheta and d2K/dtheta2 over a point set (diagonals are zero).
inline void corr_matrix_dtheta(const RowMatrix& X_sub, const Hyper& h,
                               Matrix& dK, Matrix& d2K) {
  const int j = static_cast<int>(X_sub.rows());
  const int p = static_cast<int>(X_sub.cols());
  dK.resize(j, j);
  d2K.resize(j, j);
  for (int c = 0; c < j; ++c) {
    dK(c, c) = 0.0;
    d2K(c, c) = 0.0;
    const double* xc = X_sub.data() + static_cast<std::ptrdiff_t>(c) * p;
    for (int r = c + 1; r < j; ++r) {
      const double* xr = X_sub.data() + static_cast<std::ptrdiff_t>(r) * p;
      const double d2 = detail::sq_dist_raw(xr, xc, p);
      double dk, d2k;
      detail::corr_dtheta_given(d2, h, dk, d2k);
      dK(r, c) = dk;
      dK(c, r) = dk;
      d2K(r, c) = d2k;
      d2K(c, r) = d2k;
    }
  }
}

}  // namespace localgp
