#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "localgp/errors.hpp"
#include "localgp/kernel.hpp"

namespace localgp {

/// Explicit inverse of an SPD matrix plus its log-determinant.
///
/// Storage may be preallocated beyond `dim` (design loops reserve n x n up
/// front and extend in place); the active block is `view()`. The inverse is
/// kept explicitly, not as a factorization, because the greedy criteria
/// consume Kinv-vector products directly.
struct SpdInverse {
  int dim = 0;
  double logdet = 0.0;
  Matrix kinv;  // capacity x capacity storage, active block dim x dim

  SpdInverse() = default;
  explicit SpdInverse(int capacity)
      : kinv(Matrix::Zero(capacity, capacity)) {}

  Eigen::Block<const Matrix> view() const {
    return kinv.topLeftCorner(dim, dim);
  }
  Eigen::Block<Matrix> view() { return kinv.topLeftCorner(dim, dim); }

  void reserve(int capacity) {
    if (kinv.rows() < capacity) kinv.conservativeResize(capacity, capacity);
  }
};

/// Intermediates of one bordered extension: g = -m Kinv k, m = 1/(kself -
/// k' Kinv k), and the border column k itself. m_inv is the Schur
/// complement (kself + g'k/m in the update formulas, kept as computed).
struct ExtensionScratch {
  Vector g;
  double m = 0.0;
  Vector kvec;
  double kself = 0.0;
  double m_inv = 0.0;
};

namespace detail {

/// Reference Cholesky used only to locate the failing pivot for error
/// reporting after the fast path has already failed.
inline int failing_pivot(const Matrix& K) {
  const int n = static_cast<int>(K.rows());
  Matrix L = K;
  for (int c = 0; c < n; ++c) {
    double d = L(c, c);
    for (int k = 0; k < c; ++k) d -= L(c, k) * L(c, k);
    if (!(d > 0.0)) return c;
    L(c, c) = std::sqrt(d);
    for (int r = c + 1; r < n; ++r) {
      double v = L(r, c);
      for (int k = 0; k < c; ++k) v -= L(r, k) * L(c, k);
      L(r, c) = v / L(c, c);
    }
  }
  return -1;
}

}  // namespace detail

/// Inverse and log-determinant of an SPD matrix via Cholesky. `capacity`
/// preallocates storage for later in-place extensions.
inline SpdInverse spd_build(ConstMatRef K, int capacity = 0) {
  const int j = static_cast<int>(K.rows());
  if (K.cols() != j) throw DimensionError("spd_build: matrix not square");
  if (j < 1) throw DimensionError("spd_build: empty matrix");
  Eigen::LLT<Matrix> llt(K);
  if (llt.info() != Eigen::Success) {
    throw ConditioningError("spd_build: matrix not positive definite",
                            detail::failing_pivot(Matrix(K)));
  }
  SpdInverse inv(capacity > j ? capacity : j);
  inv.dim = j;
  inv.view() = llt.solve(Matrix::Identity(j, j));
  // Drift guard: the solve is symmetric only to roundoff.
  inv.view() = (0.5 * (inv.view() + inv.view().transpose())).eval();
  inv.logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return inv;
}

/// O(j^2) preparation of a bordered extension by (kvec, kself).
inline ExtensionScratch extend_scratch(const SpdInverse& inv,
                                       ConstVecRef kvec, double kself) {
  const int j = inv.dim;
  if (kvec.size() != j) throw DimensionError("extend_scratch: kvec size");
  ExtensionScratch s;
  s.kvec = kvec;
  s.kself = kself;
  Vector t(j);
  t.noalias() = inv.view().selfadjointView<Eigen::Lower>() * s.kvec;
  s.m_inv = kself - s.kvec.dot(t);
  if (!(s.m_inv > 0.0)) {
    throw ConditioningError(
        "extend_scratch: new point numerically duplicates the span", j);
  }
  s.m = 1.0 / s.m_inv;
  s.g = (-s.m) * t;
  return s;
}

/// In-place bordered-inverse update: new Kinv = [[Kinv + g g'/m, g],[g', m]]
/// and log|K_{j+1}| = log|K_j| + log(kself + g'k/m), where the appended term
/// is exactly the Schur complement m_inv already in scratch.
inline void extend_inverse(SpdInverse& inv, const ExtensionScratch& s) {
  const int j = inv.dim;
  inv.reserve(j + 1);
  inv.kinv.topLeftCorner(j, j).noalias() +=
      s.m_inv * (s.g * s.g.transpose());
  inv.kinv.block(0, j, j, 1) = s.g;
  inv.kinv.block(j, 0, 1, j) = s.g.transpose();
  inv.kinv(j, j) = s.m;
  inv.dim = j + 1;
  // Enforce symmetry after each extension to suppress drift.
  for (int c = 0; c < j + 1; ++c) {
    for (int r = c + 1; r < j + 1; ++r) {
      const double v = 0.5 * (inv.kinv(r, c) + inv.kinv(c, r));
      inv.kinv(r, c) = v;
      inv.kinv(c, r) = v;
    }
  }
  inv.logdet += std::log(s.m_inv);
}

namespace detail {

/// Raw in-place K^{-1}Y / psi update; writes slot j of kinv_y. With
/// h = Y'g: top block += g (h/m + y), bottom = h + y m, and
/// psi += h^2/m + 2 y h + y^2 m (= psi + m (y - mu)^2 >= psi).
inline void extend_solution_core(double* kinv_y, const double* y_sub, int j,
                                 double& psi, const ExtensionScratch& s,
                                 double y_new) {
  double h = 0.0;
  for (int i = 0; i < j; ++i) h += y_sub[i] * s.g(i);
  const double top_coef = h * s.m_inv + y_new;
  for (int i = 0; i < j; ++i) kinv_y[i] += s.g(i) * top_coef;
  kinv_y[j] = h + y_new * s.m;
  psi += h * h * s.m_inv + 2.0 * y_new * h + y_new * y_new * s.m;
}

}  // namespace detail

/// O(j) update of (K^{-1}Y, psi) for the bordered system.
inline void extend_solution(Vector& kinv_y, double& psi,
                            const ExtensionScratch& s, const Vector& y_sub,
                            double y_new) {
  const int j = static_cast<int>(y_sub.size());
  if (kinv_y.size() != j) throw DimensionError("extend_solution: sizes");
  kinv_y.conservativeResize(j + 1);
  detail::extend_solution_core(kinv_y.data(), y_sub.data(), j, psi, s,
                               y_new);
}

/// tr(AB) = sum_{k,l} A(l,k) B(k,l) in O(j^2), without forming AB.
inline double trace_product(ConstMatRef A, ConstMatRef B) {
  if (A.rows() != A.cols() || B.rows() != B.cols() || A.rows() != B.rows()) {
    throw DimensionError("trace_product: dimension mismatch");
  }
  return A.cwiseProduct(B.transpose()).sum();
}

/// kappa(K) = lambda_max / lambda_min via symmetric eigensolve.
/// lambda_min <= 0 degenerates to +infinity.
inline double condition_number(ConstMatRef K) {
  if (K.rows() != K.cols()) {
    throw DimensionError("condition_number: matrix not square");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(K,
                                           Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

}  // namespace localgp
