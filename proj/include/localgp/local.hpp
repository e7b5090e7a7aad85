#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "localgp/config.hpp"
#include "localgp/design_set.hpp"
#include "localgp/errors.hpp"
#include "localgp/gp.hpp"
#include "localgp/kernel.hpp"
#include "localgp/linalg.hpp"

namespace localgp {

/// Per-location incremental state. The inverse block is preallocated to
/// the final design size and extended in place; vectors grow with the
/// design. `fisher` is maintained only while the MSPE criterion drives the
/// loop (fisher_current marks it); `vx` is the current predictive bracket
/// v_j(x) and never increases across greedy steps.
struct LocalState {
  Vector x;
  std::vector<int> indices;
  SpdInverse inv;
  Vector kinv_y;
  double psi = 0.0;
  double fisher = std::numeric_limits<double>::quiet_NaN();
  bool fisher_current = false;
  Hyper h;
  Vector kx;
  double vx = 0.0;
  RowMatrix x_sub;
  Vector y_sub;
  // Diagnostics: negative observed information clamped in the G-term, and
  // G <= 0 fallbacks to the variance-only objective.
  int fisher_clamps = 0;
  int g_fallbacks = 0;

  int j() const { return inv.dim; }
};

struct TraceRow {
  int step = 0;  // 1-based; steps 1..n0 are the NN seed
  int row_id = -1;
  double criterion = 0.0;  // squared distance (NN), reduction (ALC), J (MSPE)
  double vx_after = 0.0;
};

struct LocalDesignResult {
  GpFit fit;
  std::vector<TraceRow> trace;
  bool stalled = false;  // every remaining candidate infeasible
  int fisher_clamps = 0;
  int g_fallbacks = 0;
};

struct LocalMleResult {
  GpFit fit;
  double theta_hat = 0.0;
  int iters = 0;
  bool converged = false;
  bool boundary = false;
};

namespace detail {

inline Vector row_point(const RowMatrix& X, int row) {
  return X.row(row).transpose();
}

/// State at j = n0 from an already-sorted neighbor prefix.
inline LocalState state_from_neighbors(ConstVecRef x, const DesignSet& D,
                                       const std::vector<Neighbor>& nbrs,
                                       int n0, const Hyper& h,
                                       int capacity) {
  const int p = D.dim();
  LocalState st;
  st.x = x;
  st.h = h;
  st.indices.reserve(capacity > n0 ? capacity : n0);
  st.x_sub.resize(n0, p);
  st.y_sub.resize(n0);
  for (int i = 0; i < n0; ++i) {
    st.indices.push_back(nbrs[i].id);
    st.x_sub.row(i) = D.X().row(nbrs[i].id);
    st.y_sub(i) = D.y(nbrs[i].id);
  }
  const Matrix K = corr_matrix(st.x_sub, h);
  st.inv = spd_build(K, capacity);
  st.kinv_y.resize(n0);
  st.kinv_y.noalias() =
      st.inv.view().selfadjointView<Eigen::Lower>() * st.y_sub;
  st.psi = st.y_sub.dot(st.kinv_y);
  st.kx = cross_corr_vector(x, st.x_sub, h);
  Vector zx(n0);
  zx.noalias() = st.inv.view().selfadjointView<Eigen::Lower>() * st.kx;
  st.vx = std::max((1.0 + h.eta) - st.kx.dot(zx), 0.0);
  if (n0 >= 3 && st.psi > 0.0) {
    GpFit seed;
    seed.inv = st.inv;
    seed.kinv_y = st.kinv_y;
    seed.psi = st.psi;
    seed.h = h;
    seed.x_sub = st.x_sub;
    seed.y_sub = st.y_sub;
    st.fisher = -loglik_dtheta(seed).second;
    st.fisher_current = true;
  }
  return st;
}

/// -d^2/dtheta^2 of the Student-t conditional log likelihood of y_new given
/// the current j observations, evaluated with the j-point state:
/// l = const - log(V)/2 - ((j+1)/2) log A, A = (j-2) + r^2/V, r = y - mu.
/// Returns the negated Hessian; `v_out` reports the predictive bracket so
/// callers can reject degenerate candidates.
inline double conditional_neg_hessian(const LocalState& st,
                                      ConstMatRef Kdot, ConstMatRef Kddot,
                                      ConstVecRef kc, ConstVecRef kcd,
                                      ConstVecRef kcdd, double y_new,
                                      double* v_out = nullptr) {
  const int j = st.j();
  if (j < 3) throw DimensionError("conditional_neg_hessian: need j >= 3");
  const auto Kinv = st.inv.view().selfadjointView<Eigen::Lower>();
  const auto KdS = Kdot.selfadjointView<Eigen::Lower>();
  const auto KddS = Kddot.selfadjointView<Eigen::Lower>();
  const Vector& w = st.kinv_y;

  Vector z(j), zd(j), zdd(j), wd(j), wdd(j), t1(j), t2(j);
  z.noalias() = Kinv * kc;
  t1.noalias() = KdS * z;
  t1 = kcd - t1;
  zd.noalias() = Kinv * t1;
  t1.noalias() = KddS * z;
  t2.noalias() = KdS * zd;
  t1 = kcdd - t1 - 2.0 * t2;
  zdd.noalias() = Kinv * t1;
  t1.noalias() = KdS * w;
  wd.noalias() = Kinv * t1;
  wd = -wd;
  t1.noalias() = KddS * w;
  t2.noalias() = KdS * wd;
  t1 += 2.0 * t2;
  wdd.noalias() = Kinv * t1;
  wdd = -wdd;

  const double v = (1.0 + st.h.eta) - kc.dot(z);
  if (v_out) *v_out = v;
  if (!(v > 0.0)) {
    throw ConditioningError("conditional_neg_hessian: V <= 0 at new point");
  }
  const double mu = kc.dot(w);
  const double mud = zd.dot(st.y_sub);
  const double mudd = zdd.dot(st.y_sub);
  const double psid = st.y_sub.dot(wd);
  const double psidd = st.y_sub.dot(wdd);
  const double vd = -(kcd.dot(z) + kc.dot(zd));
  const double vdd = -(kcdd.dot(z) + 2.0 * kcd.dot(zd) + kc.dot(zdd));
  const double V = st.psi * v / (j - 2);
  const double Vd = (psid * v + st.psi * vd) / (j - 2);
  const double Vdd = (psidd * v + 2.0 * psid * vd + st.psi * vdd) / (j - 2);

  const double r = y_new - mu;
  const double A = (j - 2) + r * r / V;
  const double Ad = -2.0 * r * mud / V - r * r * Vd / (V * V);
  const double Add = 2.0 * mud * mud / V - 2.0 * r * mudd / V +
                     4.0 * r * mud * Vd / (V * V) - r * r * Vdd / (V * V) +
                     2.0 * r * r * Vd * Vd / (V * V * V);
  const double d2l = -Vdd / (2.0 * V) + Vd * Vd / (2.0 * V * V) -
                     0.5 * (j + 1) * (Add / A - (Ad / A) * (Ad / A));
  return -d2l;
}

/// Candidate workspace for the batched greedy step. Column c holds
/// candidate ids[c]; the first `rows` rows of Kc/Kdc correspond to the
/// chosen sub-design in inclusion order. Everything is preallocated to
/// (n, close) once per design loop.
struct StepWorkspace {
  std::vector<int> ids;
  Vector kxc;  // corr(candidate, x)
  Vector d2x;  // squared distance candidate -> x
  Matrix Kc;
  Matrix Kdc;
  Matrix T, U, Zd;
  Matrix Kdot, Kddot;  // derivative matrices of the chosen sub-design
  Vector kxd;          // theta-derivative of kx (MSPE hoists mu-dot at x)
  Vector mv, sx, red, mud_c, vd_c, scores;
  int rows = 0;
  int count = 0;
  bool with_derivs = false;

  void init(const LocalState& st, const DesignSet& D,
            const std::vector<Neighbor>& cands, int cap_n, bool derivs) {
    const int p = D.dim();
    const int j = st.j();
    with_derivs = derivs;
    count = static_cast<int>(cands.size());
    rows = j;
    ids.resize(count);
    kxc.resize(count);
    d2x.resize(count);
    Kc.resize(cap_n, count);
    T.resize(cap_n, count);
    mv.resize(count);
    sx.resize(count);
    red.resize(count);
    scores.resize(count);
    if (with_derivs) {
      Kdc.resize(cap_n, count);
      U.resize(cap_n, count);
      Zd.resize(cap_n, count);
      Kdot.resize(cap_n, cap_n);
      Kddot.resize(cap_n, cap_n);
      kxd.resize(cap_n);
      mud_c.resize(count);
      vd_c.resize(count);
      corr_matrix_dtheta(st.x_sub, st.h, Kdot, Kddot);
      Kdot.conservativeResize(cap_n, cap_n);
      Kddot.conservativeResize(cap_n, cap_n);
      for (int i = 0; i < j; ++i) {
        double dk, d2k;
        corr_dtheta_given(sq_dist_raw(st.x.data(),
                                      st.x_sub.data() +
                                          static_cast<std::ptrdiff_t>(i) * p,
                                      p),
                          st.h, dk, d2k);
        kxd(i) = dk;
      }
    }
    for (int c = 0; c < count; ++c) {
      const int id = cands[c].id;
      ids[c] = id;
      d2x(c) = cands[c].d2;
      const double* xc = D.X().data() + static_cast<std::ptrdiff_t>(id) * p;
      kxc(c) = corr_given(cands[c].d2,
                          exact_equal_raw(st.x.data(), xc, p), st.h);
      for (int i = 0; i < j; ++i) {
        const double* xi =
            st.x_sub.data() + static_cast<std::ptrdiff_t>(i) * p;
        const double d2 = sq_dist_raw(xi, xc, p);
        Kc(i, c) = corr_given(d2, exact_equal_raw(xi, xc, p), st.h);
        if (with_derivs) {
          double dk, d2k;
          corr_dtheta_given(d2, st.h, dk, d2k);
          Kdc(i, c) = dk;
        }
      }
    }
  }

  /// Append the chosen point's correlation row (and derivative entries)
  /// after the state has been extended to include it.
  void append_chosen_row(const LocalState& st, const DesignSet& D) {
    const int p = D.dim();
    const int j_new = st.j();  // state already extended
    const double* xn =
        st.x_sub.data() + static_cast<std::ptrdiff_t>(j_new - 1) * p;
    for (int c = 0; c < count; ++c) {
      const double* xc =
          D.X().data() + static_cast<std::ptrdiff_t>(ids[c]) * p;
      const double d2 = sq_dist_raw(xn, xc, p);
      Kc(j_new - 1, c) = corr_given(d2, exact_equal_raw(xn, xc, p), st.h);
      if (with_derivs) {
        double dk, d2k;
        corr_dtheta_given(d2, st.h, dk, d2k);
        Kdc(j_new - 1, c) = dk;
      }
    }
    if (with_derivs) {
      for (int i = 0; i < j_new - 1; ++i) {
        const double* xi =
            st.x_sub.data() + static_cast<std::ptrdiff_t>(i) * p;
        const double d2 = sq_dist_raw(xi, xn, p);
        double dk, d2k;
        corr_dtheta_given(d2, st.h, dk, d2k);
        Kdot(i, j_new - 1) = dk;
        Kdot(j_new - 1, i) = dk;
        Kddot(i, j_new - 1) = d2k;
        Kddot(j_new - 1, i) = d2k;
      }
      Kdot(j_new - 1, j_new - 1) = 0.0;
      Kddot(j_new - 1, j_new - 1) = 0.0;
      double dk, d2k;
      corr_dtheta_given(sq_dist_raw(st.x.data(), xn, p), st.h, dk, d2k);
      kxd(j_new - 1) = dk;
    }
    rows = j_new;
  }

  void remove(int c) {
    const int last = count - 1;
    if (c != last) {
      ids[c] = ids[last];
      kxc(c) = kxc(last);
      d2x(c) = d2x(last);
      Kc.col(c).head(rows) = Kc.col(last).head(rows);
      if (with_derivs) Kdc.col(c).head(rows) = Kdc.col(last).head(rows);
    }
    count = last;
  }
};

struct StepChoice {
  int col = -1;     // workspace column
  int row_id = -1;  // design row
  double value = 0.0;
  bool feasible = false;
};

/// Score all live candidates and pick the winner (max reduction for ALC,
/// min J for MSPE, min distance for NN); ties break to the lower row id.
/// Infeasible candidates (nonpositive Schur complement) are skipped.
inline StepChoice batch_step(LocalState& st, StepWorkspace& ws,
                             Criterion crit) {
  StepChoice best;
  if (ws.count == 0) return best;
  if (crit == Method::kNN) {
    for (int c = 0; c < ws.count; ++c) {
      if (!best.feasible || ws.d2x(c) < best.value ||
          (ws.d2x(c) == best.value && ws.ids[c] < best.row_id)) {
        best = {c, ws.ids[c], ws.d2x(c), true};
      }
    }
    return best;
  }

  const int j = st.j();
  const int count = ws.count;
  auto KcB = ws.Kc.topLeftCorner(j, count);
  auto TB = ws.T.topLeftCorner(j, count);
  TB.noalias() = st.inv.view().selfadjointView<Eigen::Lower>() * KcB;
  for (int c = 0; c < count; ++c) {
    ws.mv(c) = (1.0 + st.h.eta) - KcB.col(c).dot(TB.col(c));
  }
  ws.sx.head(count).noalias() = TB.transpose() * st.kx;

  for (int c = 0; c < count; ++c) {
    const double diff = ws.kxc(c) - ws.sx(c);
    double r = (ws.mv(c) > 0.0) ? diff * diff / ws.mv(c) : 0.0;
    if (r < 1e-14 * st.vx) r = 0.0;  // roundoff floor
    ws.red(c) = r;
  }

  if (crit == Method::kALC) {
    for (int c = 0; c < count; ++c) {
      if (!(ws.mv(c) > 0.0)) continue;
      if (!best.feasible || ws.red(c) > best.value ||
          (ws.red(c) == best.value && ws.ids[c] < best.row_id)) {
        best = {c, ws.ids[c], ws.red(c), true};
      }
    }
    return best;
  }

  // MSPE: J(cand) = V_j(x | cand) + (dmu(x)/dtheta)^2 / G_{j+1}(cand).
  const auto Kinv = st.inv.view().selfadjointView<Eigen::Lower>();
  auto KdotB = ws.Kdot.topLeftCorner(j, j);
  auto KdcB = ws.Kdc.topLeftCorner(j, count);
  auto UB = ws.U.topLeftCorner(j, count);
  auto ZdB = ws.Zd.topLeftCorner(j, count);
  UB.noalias() = KdotB.selfadjointView<Eigen::Lower>() * TB;
  UB = KdcB - UB;
  ZdB.noalias() = Kinv * UB;
  ws.mud_c.head(count).noalias() = ZdB.transpose() * st.y_sub;
  for (int c = 0; c < count; ++c) {
    ws.vd_c(c) = -(KdcB.col(c).dot(TB.col(c)) + KcB.col(c).dot(ZdB.col(c)));
  }

  // Step-constant pieces: psi-dot and dmu(x)/dtheta at the current state.
  Vector t(j), wd(j), zx(j), zxd(j);
  t.noalias() = KdotB.selfadjointView<Eigen::Lower>() * st.kinv_y;
  wd.noalias() = Kinv * t;
  wd = -wd;
  const double psid = st.y_sub.dot(wd);
  zx.noalias() = Kinv * st.kx;
  t.noalias() = KdotB.selfadjointView<Eigen::Lower>() * zx;
  t = ws.kxd.head(j) - t;
  zxd.noalias() = Kinv * t;
  const double mud_x = zxd.dot(st.y_sub);
  const double f_plus =
      std::isfinite(st.fisher) ? std::max(st.fisher, 0.0) : 0.0;
  if (std::isfinite(st.fisher) && st.fisher < 0.0) ++st.fisher_clamps;
  const double vterm_coef =
      static_cast<double>(j + 1) * st.psi /
      (static_cast<double>(j) * static_cast<double>(j - 1));

  for (int c = 0; c < count; ++c) {
    const double v = ws.mv(c);
    if (!(v > 0.0)) continue;
    const double vnext = std::max(st.vx - ws.red(c), 0.0);
    double J = vterm_coef * vnext;
    const double V = st.psi * v / (j - 2);
    const double Vd = (psid * v + st.psi * ws.vd_c(c)) / (j - 2);
    const double G = f_plus + 0.5 * Vd * Vd / (V * V) +
                     ws.mud_c(c) * ws.mud_c(c) / V;
    if (std::isfinite(G) && G > 0.0) {
      J += mud_x * mud_x / G;
    } else {
      ++st.g_fallbacks;  // information not yet positive: V-only objective
    }
    if (!best.feasible || J < best.value ||
        (J == best.value && ws.ids[c] < best.row_id)) {
      best = {c, ws.ids[c], J, true};
    }
  }
  return best;
}

/// Extend the state by workspace column `col` (exact O(j^2) path: scratch,
/// bordered inverse, solution, kx/vx, and the Fisher recursion when MSPE
/// drives the loop). Returns the exact criterion value for the trace.
inline double apply_extension(LocalState& st, const DesignSet& D,
                              StepWorkspace& ws, const StepChoice& pick,
                              Criterion crit) {
  const int j = st.j();
  const int p = D.dim();
  const int row = pick.row_id;
  const Vector kc = ws.Kc.col(pick.col).head(j);
  const double y_new = D.y(row);
  const ExtensionScratch s = extend_scratch(st.inv, kc, 1.0 + st.h.eta);

  const double diff = ws.kxc(pick.col) + s.m_inv * st.kx.dot(s.g);
  double red = s.m * diff * diff;
  if (red < 1e-14 * st.vx) red = 0.0;
  double criterion_value = red;
  double fisher_next = st.fisher;
  if (crit == Method::kMSPE) {
    Vector kcd(j), kcdd(j);
    for (int i = 0; i < j; ++i) {
      const double* xi = st.x_sub.data() + static_cast<std::ptrdiff_t>(i) * p;
      const double* xn = D.X().data() + static_cast<std::ptrdiff_t>(row) * p;
      double dk, d2k;
      corr_dtheta_given(sq_dist_raw(xi, xn, p), st.h, dk, d2k);
      kcd(i) = dk;
      kcdd(i) = d2k;
    }
    fisher_next =
        st.fisher + conditional_neg_hessian(
                        st, ws.Kdot.topLeftCorner(j, j),
                        ws.Kddot.topLeftCorner(j, j), kc, kcd, kcdd, y_new);
    criterion_value = pick.value;  // J from the batched scorer
  } else if (crit == Method::kNN) {
    criterion_value = pick.value;  // squared distance
  }

  extend_inverse(st.inv, s);
  st.kinv_y.conservativeResize(j + 1);
  detail::extend_solution_core(st.kinv_y.data(), st.y_sub.data(), j, st.psi,
                               s, y_new);
  st.x_sub.conservativeResize(j + 1, p);
  st.x_sub.row(j) = D.X().row(row);
  st.y_sub.conservativeResize(j + 1);
  st.y_sub(j) = y_new;
  st.indices.push_back(row);
  st.kx.conservativeResize(j + 1);
  st.kx(j) = ws.kxc(pick.col);
  st.vx = std::max(st.vx - red, 0.0);
  if (crit == Method::kMSPE) {
    st.fisher = fisher_next;
    st.fisher_current = true;
  } else if (crit != Method::kNN) {
    st.fisher_current = false;
  }

  ws.append_chosen_row(st, D);
  ws.remove(pick.col);
  return criterion_value;
}

struct AppliedStep {
  bool ok = false;
  int row_id = -1;
  double value = 0.0;
};

/// Score, pick, and extend — dropping candidates the exact extension
/// vetoes (the batched Schur complement can land a hair above zero where
/// the O(j^2) path sees a clean duplicate). State is untouched by a veto.
inline AppliedStep step_and_apply(LocalState& st, const DesignSet& D,
                                  StepWorkspace& ws, Criterion crit) {
  for (;;) {
    const StepChoice pick = batch_step(st, ws, crit);
    if (!pick.feasible) return {};
    try {
      const double value = apply_extension(st, D, ws, pick, crit);
      return {true, pick.row_id, value};
    } catch (const ConditioningError&) {
      ws.remove(pick.col);
    }
  }
}

}  // namespace detail

/// Seed state: the n0 nearest design rows (ties to lower id), factorized
/// from scratch. `capacity` preallocates for the coming extensions.
inline LocalState init_nn(ConstVecRef x, const DesignSet& D, int n0,
                          const Hyper& h, int capacity = 0) {
  if (n0 < 1 || n0 > D.n()) {
    throw InvalidInputError("init_nn: need 1 <= n0 <= N");
  }
  std::vector<Neighbor> nbrs;
  D.knn(x, n0, nbrs);
  return detail::state_from_neighbors(x, D, nbrs, n0, h,
                                      capacity > n0 ? capacity : n0);
}

/// ALC score of one candidate: the reduction v_j(x) - v_{j+1}(x), computed
/// through the bordered extension in O(j^2) without forming K_{j+1}^{-1}.
inline double alc_reduction(const LocalState& state, ConstVecRef x_cand,
                            double kx_cand) {
  const Vector kc = cross_corr_vector(x_cand, state.x_sub, state.h);
  const ExtensionScratch s = extend_scratch(state.inv, kc, 1.0 + state.h.eta);
  const double diff = kx_cand + s.m_inv * state.kx.dot(s.g);
  double red = s.m * diff * diff;
  if (red < 1e-14 * state.vx) red = 0.0;
  return red;
}

inline double alc_reduction(const LocalState& state, const DesignSet& D,
                            int candidate) {
  const Vector xc = detail::row_point(D.X(), candidate);
  return alc_reduction(state, xc, corr(state.x, xc, state.h));
}

/// MSPE objective for one candidate (smaller is better):
/// J = (j+1) psi / (j (j-1)) * v_{j+1}(x) + (dmu_j(x)/dtheta)^2 / G_{j+1},
/// with G_{j+1} = max(F_j, 0) + Vd^2/(2 V^2) + mud^2/V at the candidate.
/// Falls back to the variance term alone when G is not positive.
inline double mspe_criterion(LocalState& state, ConstVecRef x_cand) {
  const int j = state.j();
  if (j < 3) throw DimensionError("mspe_criterion: need j >= 3");
  Matrix Kdot, Kddot;
  corr_matrix_dtheta(state.x_sub, state.h, Kdot, Kddot);
  Vector kc, kcd, kcdd;
  cross_corr_vector_dtheta(x_cand, state.x_sub, state.h, kc, kcd, kcdd);
  const auto Kinv = state.inv.view().selfadjointView<Eigen::Lower>();
  const auto KdS = Kdot.selfadjointView<Eigen::Lower>();

  Vector zc(j), zcd(j), wd(j), t(j);
  zc.noalias() = Kinv * kc;
  const double v = (1.0 + state.h.eta) - kc.dot(zc);
  if (!(v > 0.0)) {
    throw ConditioningError("mspe_criterion: candidate duplicates the span");
  }
  t.noalias() = KdS * zc;
  t = kcd - t;
  zcd.noalias() = Kinv * t;
  const double mud = zcd.dot(state.y_sub);
  t.noalias() = KdS * state.kinv_y;
  wd.noalias() = Kinv * t;
  wd = -wd;
  const double psid = state.y_sub.dot(wd);
  const double vd = -(kcd.dot(zc) + kc.dot(zcd));
  const double V = state.psi * v / (j - 2);
  const double Vd = (psid * v + state.psi * vd) / (j - 2);

  // Reduction at x from this candidate, and the resulting variance term.
  const double kx_cand = corr(state.x, x_cand, state.h);
  const double diffx = kx_cand - state.kx.dot(zc);
  double red = diffx * diffx / v;
  if (red < 1e-14 * state.vx) red = 0.0;
  const double vnext = std::max(state.vx - red, 0.0);
  double J = (j + 1) * state.psi /
             (static_cast<double>(j) * static_cast<double>(j - 1)) * vnext;

  // dmu(x)/dtheta at the current state.
  Vector kxd(j);
  {
    const int p = static_cast<int>(state.x_sub.cols());
    for (int i = 0; i < j; ++i) {
      double dk, d2k;
      detail::corr_dtheta_given(
          detail::sq_dist_raw(
              state.x.data(),
              state.x_sub.data() + static_cast<std::ptrdiff_t>(i) * p, p),
          state.h, dk, d2k);
      kxd(i) = dk;
    }
  }
  Vector zx(j), zxd(j);
  zx.noalias() = Kinv * state.kx;
  t.noalias() = KdS * zx;
  t = kxd - t;
  zxd.noalias() = Kinv * t;
  const double mud_x = zxd.dot(state.y_sub);

  const double f_plus =
      std::isfinite(state.fisher) ? std::max(state.fisher, 0.0) : 0.0;
  if (std::isfinite(state.fisher) && state.fisher < 0.0) {
    ++state.fisher_clamps;
  }
  const double G = f_plus + 0.5 * Vd * Vd / (V * V) + mud * mud / V;
  if (std::isfinite(G) && G > 0.0) {
    J += mud_x * mud_x / G;
  } else {
    ++state.g_fallbacks;
  }
  return J;
}

inline double mspe_criterion(LocalState& state, const DesignSet& D,
                             int candidate) {
  return mspe_criterion(state, detail::row_point(D.X(), candidate));
}

/// Fisher-information recursion: F_{j+1} = F_j - d^2 l_j(y_new; theta) /
/// dtheta^2, using the Student-t conditional likelihood at the j-point
/// state. The state itself is not modified.
inline double update_fisher(const LocalState& state, ConstVecRef x_new,
                            double y_new) {
  if (!std::isfinite(state.fisher)) {
    throw InvalidInputError("update_fisher: fisher not initialized");
  }
  Matrix Kdot, Kddot;
  corr_matrix_dtheta(state.x_sub, state.h, Kdot, Kddot);
  Vector kc, kcd, kcdd;
  cross_corr_vector_dtheta(x_new, state.x_sub, state.h, kc, kcd, kcdd);
  return state.fisher + detail::conditional_neg_hessian(
                            state, Kdot, Kddot, kc, kcd, kcdd, y_new);
}

inline double update_fisher(const LocalState& state, const DesignSet& D,
                            int new_row) {
  return update_fisher(state, detail::row_point(D.X(), new_row),
                       D.y(new_row));
}

/// One greedy step over an explicit candidate list. Scores every feasible
/// candidate, extends the state by the winner, and returns its row id.
inline int greedy_step(LocalState& state, const DesignSet& D, Criterion crit,
                       const std::vector<int>& candidates) {
  if (candidates.empty()) {
    throw InvalidInputError("greedy_step: empty candidate list");
  }
  std::vector<Neighbor> cands(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cands[i].id = candidates[i];
    cands[i].d2 = sq_dist(state.x, detail::row_point(D.X(), candidates[i]));
  }
  detail::StepWorkspace ws;
  ws.init(state, D, cands, state.j() + 1, crit == Method::kMSPE);
  const detail::AppliedStep step = detail::step_and_apply(state, D, ws, crit);
  if (!step.ok) {
    throw DesignStallError("greedy_step: all candidates infeasible");
  }
  return step.row_id;
}

namespace detail {

inline LocalDesignResult run_local_design(ConstVecRef x, const DesignSet& D,
                                          const StageConfig& cfg,
                                          const Hyper& h) {
  cfg.validate(D.n());
  if (cfg.method == Method::kMSPE && cfg.n0 < 3) {
    throw InvalidInputError("local_design: MSPE needs n0 >= 3");
  }
  const int kq = std::min(std::max(cfg.close, cfg.n), D.n());
  std::vector<Neighbor> nbrs;
  D.knn(x, kq, nbrs);

  LocalState st = state_from_neighbors(x, D, nbrs, cfg.n0, h, cfg.n);

  LocalDesignResult out;
  out.trace.reserve(cfg.n);
  // Seed rows: criterion is the squared distance; vx via prefix rebuilds
  // (tiny, n0 <= a handful).
  for (int i = 1; i <= cfg.n0; ++i) {
    RowMatrix xp = st.x_sub.topRows(i);
    const Matrix Kp = corr_matrix(xp, h);
    const SpdInverse ip = spd_build(Kp);
    const Vector kp = cross_corr_vector(x, xp, h);
    Vector zp(i);
    zp.noalias() = ip.view().selfadjointView<Eigen::Lower>() * kp;
    const double vxp = std::max((1.0 + h.eta) - kp.dot(zp), 0.0);
    out.trace.push_back({i, st.indices[i - 1], nbrs[i - 1].d2, vxp});
  }

  if (cfg.n > cfg.n0) {
    std::vector<Neighbor> cands(nbrs.begin() + cfg.n0, nbrs.end());
    StepWorkspace ws;
    ws.init(st, D, cands, cfg.n, cfg.method == Method::kMSPE);
    for (int step = cfg.n0; step < cfg.n; ++step) {
      const AppliedStep applied = step_and_apply(st, D, ws, cfg.method);
      if (!applied.ok) {
        out.stalled = true;
        break;
      }
      out.trace.push_back({step + 1, applied.row_id, applied.value, st.vx});
    }
  }

  out.fisher_clamps = st.fisher_clamps;
  out.g_fallbacks = st.g_fallbacks;
  out.fit = fit_gp(std::move(st.indices), std::move(st.x_sub),
                   std::move(st.y_sub), h, cfg.n);
  return out;
}

}  // namespace detail

/// Full n0 -> n greedy local design at fixed theta. Candidates are the N'
/// nearest unchosen rows, fixed at initialization. The returned fit is
/// rebuilt from scratch at the final index set (one Cholesky) so its
/// matrices carry no accumulated extension drift.
inline LocalDesignResult local_design(ConstVecRef x, const DesignSet& D,
                                      const StageConfig& cfg,
                                      const Hyper& h) {
  LocalDesignResult out = detail::run_local_design(x, D, cfg, h);
  if (out.stalled) {
    throw DesignStallError("local_design: all candidates infeasible at step " +
                           std::to_string(out.trace.size() + 1));
  }
  return out;
}

/// Same as local_design but a stall returns the partial design (fit over
/// the points chosen so far, `stalled` set) instead of throwing.
inline LocalDesignResult local_design_partial(ConstVecRef x,
                                              const DesignSet& D,
                                              const StageConfig& cfg,
                                              const Hyper& h) {
  return detail::run_local_design(x, D, cfg, h);
}

/// Newton MLE for theta on the local fit, then one O(n^3) refresh of the
/// fit matrices at theta-hat.
inline LocalMleResult local_mle(const GpFit& fit, double lo, double hi,
                                double tol = 1e-5, int max_iter = 50) {
  const MleResult res = mle_theta(fit, lo, hi, tol, max_iter);
  LocalMleResult out;
  out.theta_hat = res.theta_hat;
  out.iters = res.iters;
  out.converged = res.converged;
  out.boundary = res.boundary;
  out.fit = fit_gp(fit.indices, fit.x_sub, fit.y_sub,
                   Hyper{res.theta_hat, fit.h.eta},
                   static_cast<int>(fit.inv.kinv.rows()));
  return out;
}

}  // namespace localgp
