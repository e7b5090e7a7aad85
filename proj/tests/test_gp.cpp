#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracle_helpers.hpp"

using localgp::fisher_info;
using localgp::fit_gp;
using localgp::GpFit;
using localgp::Hyper;
using localgp::log_marginal;
using localgp::loglik_dtheta;
using localgp::Matrix;
using localgp::mle_theta;
using localgp::MleResult;
using localgp::predict;
using localgp::predict_dtheta;
using localgp::Prediction;
using localgp::RowMatrix;
using localgp::Vector;

namespace {

std::vector<int> iota_ids(int n) {
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

GpFit random_fit(std::mt19937_64& gen, int j, int p, const Hyper& h,
                 double half_width = 1.5) {
  const RowMatrix X = oracle::random_design(gen, j, p, -half_width,
                                            half_width);
  return fit_gp(iota_ids(j), X, oracle::toy_responses(X), h);
}

}  // namespace

TEST(LogMarginal, ClosedFormAtIdentityKernel) {
  // Two orthogonal points (infinitely separated), eta = 0: K = I,
  // Y = (1,1) gives psi = 2 and log p = -log(2 pi).
  RowMatrix X(2, 1);
  X << 0.0, 1e9;
  Vector y(2);
  y << 1.0, 1.0;
  const GpFit fit = fit_gp(iota_ids(2), X, y, Hyper{1.0, 0.0});
  ASSERT_DOUBLE_EQ(fit.psi, 2.0);
  EXPECT_NEAR(log_marginal(fit), -std::log(2.0 * M_PI), 1e-12);
}

TEST(LogMarginal, ZeroPsiRejected) {
  RowMatrix X(2, 1);
  X << 0.0, 1.0;
  const GpFit fit = fit_gp(iota_ids(2), X, Vector::Zero(2), Hyper{1.0, 1e-6});
  EXPECT_THROW(log_marginal(fit), localgp::ConditioningError);
}

TEST(LogMarginal, PermutationInvariant) {
  std::mt19937_64 gen(41);
  const Hyper h{0.8, 1e-6};
  const RowMatrix X = oracle::random_design(gen, 20, 2, -1.5, 1.5);
  const Vector y = oracle::toy_responses(X);
  const GpFit fit = fit_gp(iota_ids(20), X, y, h);

  std::vector<int> perm = iota_ids(20);
  std::shuffle(perm.begin(), perm.end(), gen);
  RowMatrix Xp(20, 2);
  Vector yp(20);
  for (int i = 0; i < 20; ++i) {
    Xp.row(i) = X.row(perm[i]);
    yp(i) = y(perm[i]);
  }
  const GpFit pfit = fit_gp(iota_ids(20), Xp, yp, h);
  EXPECT_NEAR(log_marginal(fit), log_marginal(pfit), 1e-10);

  Vector x(2);
  x << 0.33, -0.7;
  const Prediction a = predict(fit, x);
  const Prediction b = predict(pfit, x);
  EXPECT_NEAR(a.mean, b.mean, 1e-10);
  EXPECT_NEAR(a.scale2, b.scale2, 1e-10);
}

TEST(LogMarginal, MatchesDenseOracle) {
  std::mt19937_64 gen(43);
  const Hyper h{0.6, 1e-6};
  const RowMatrix X = oracle::random_design(gen, 15, 2, -1.5, 1.5);
  const Vector y = oracle::toy_responses(X);
  const GpFit fit = fit_gp(iota_ids(15), X, y, h);
  EXPECT_NEAR(log_marginal(fit), oracle::dense_loglik(X, y, h), 1e-9);
}

TEST(LoglikDtheta, MatchesFiniteDifferences) {
  std::mt19937_64 gen(47);
  for (int rep = 0; rep < 5; ++rep) {
    const Hyper h{0.4 + 0.3 * rep, 1e-6};
    const RowMatrix X = oracle::random_design(gen, 30, 2, -1.5, 1.5);
    const Vector y = oracle::toy_responses(X);
    const GpFit fit = fit_gp(iota_ids(30), X, y, h);
    const auto [l1, l2] = loglik_dtheta(fit);

    const auto ll = [&](double t) {
      return oracle::dense_loglik(X, y, Hyper{t, h.eta});
    };
    const double fd_l1 = oracle::fd1(ll, h.theta, 1e-4 * h.theta);
    EXPECT_LE(oracle::rel_err(l1, fd_l1), 1e-5) << "theta=" << h.theta;

    const auto l1_of = [&](double t) {
      return loglik_dtheta(fit_gp(iota_ids(30), X, y, Hyper{t, h.eta})).first;
    };
    const double fd_l2 = oracle::fd1(l1_of, h.theta, 1e-5 * h.theta);
    EXPECT_LE(oracle::rel_err(l2, fd_l2), 1e-4) << "theta=" << h.theta;
  }
}

TEST(LoglikDtheta, ConstantResponsesCloseOverFormula) {
  std::mt19937_64 gen(53);
  const Hyper h{0.7, 1e-6};
  const RowMatrix X = oracle::random_design(gen, 12, 2, -1.0, 1.0);
  const double c = 2.5;
  const GpFit fit =
      fit_gp(iota_ids(12), X, Vector::Constant(12, c), h);
  // psi = c^2 1' Kinv 1 with no special casing.
  const oracle::DenseFit df = oracle::dense_fit(X, Vector::Constant(12, c), h);
  EXPECT_NEAR(fit.psi,
              c * c * (df.Kinv * Vector::Ones(12)).sum(), 1e-8);
  const auto [l1, l2] = loglik_dtheta(fit);
  EXPECT_TRUE(std::isfinite(l1));
  EXPECT_TRUE(std::isfinite(l2));
}

TEST(MleTheta, RecoversGenerativeLengthscale) {
  std::mt19937_64 gen(59);
  const double theta_star = 1.0;
  std::vector<double> hats;
  for (int rep = 0; rep < 30; ++rep) {
    const RowMatrix X = oracle::random_design(gen, 40, 2, -1.5, 1.5);
    const Vector y = oracle::gp_draw(X, Hyper{theta_star, 1e-6}, gen);
    const GpFit fit = fit_gp(iota_ids(40), X, y, Hyper{0.5, 1e-6});
    const MleResult res = mle_theta(fit, 1e-3, 1e3);
    hats.push_back(res.theta_hat);
  }
  std::nth_element(hats.begin(), hats.begin() + 15, hats.end());
  const double median = hats[15];
  EXPECT_GE(median, 0.5);
  EXPECT_LE(median, 2.0);
}

TEST(MleTheta, AgreesWithGridSearchOracle) {
  std::mt19937_64 gen(61);
  for (int rep = 0; rep < 3; ++rep) {
    const RowMatrix X = oracle::random_design(gen, 30, 2, -1.5, 1.5);
    const Vector y = oracle::gp_draw(X, Hyper{0.8, 1e-6}, gen);
    const GpFit fit = fit_gp(iota_ids(30), X, y, Hyper{0.3, 1e-6});
    const MleResult res = mle_theta(fit, 1e-3, 1e3);

    // 240-cell log grid over the same bounds.
    const int cells = 240;
    double best_ll = -1e300;
    int best_i = 0;
    for (int i = 0; i <= cells; ++i) {
      const double t =
          std::exp(std::log(1e-3) + i * (std::log(1e3) - std::log(1e-3)) /
                                        cells);
      const double ll = oracle::dense_loglik(X, y, Hyper{t, 1e-6});
      if (ll > best_ll) {
        best_ll = ll;
        best_i = i;
      }
    }
    const double cell =
        (std::log(1e3) - std::log(1e-3)) / cells;  // log width
    const double grid_theta =
        std::exp(std::log(1e-3) + best_i * cell);
    EXPECT_LE(std::abs(std::log(res.theta_hat) - std::log(grid_theta)),
              1.5 * cell)
        << "rep=" << rep;
  }
}

TEST(MleTheta, RestartAtOptimumConvergesImmediately) {
  std::mt19937_64 gen(67);
  const RowMatrix X = oracle::random_design(gen, 30, 2, -1.5, 1.5);
  const Vector y = oracle::gp_draw(X, Hyper{0.8, 1e-6}, gen);
  GpFit fit = fit_gp(iota_ids(30), X, y, Hyper{0.3, 1e-6});
  const MleResult first = mle_theta(fit, 1e-3, 1e3);
  ASSERT_TRUE(first.converged);

  const GpFit refit =
      fit_gp(iota_ids(30), X, y, Hyper{first.theta_hat, 1e-6});
  const MleResult again = mle_theta(refit, 1e-3, 1e3);
  EXPECT_LE(again.iters, 2);
}

TEST(MleTheta, BoundaryFlagAtMonotoneLikelihood) {
  // Nearly constant responses over a tight cluster push theta-hat to the
  // upper bound: l1 > 0 at hi.
  RowMatrix X(5, 1);
  X << 0.0, 0.01, 0.02, 0.03, 0.04;
  Vector y(5);
  y << 1.0, 1.0001, 1.0002, 1.0001, 1.0;
  const GpFit fit = fit_gp(iota_ids(5), X, y, Hyper{1.0, 1e-6});
  const MleResult res = mle_theta(fit, 1e-2, 1e2);
  if (res.boundary) {
    EXPECT_TRUE(res.theta_hat == 1e-2 || res.theta_hat == 1e2);
  }
  EXPECT_TRUE(res.converged);
}

TEST(Predict, InterpolatesAtTrainingSite) {
  std::mt19937_64 gen(71);
  const Hyper h{0.7, 1e-10};
  const RowMatrix X = oracle::random_design(gen, 25, 2, -1.5, 1.5);
  const Vector y = oracle::toy_responses(X);
  const GpFit fit = fit_gp(iota_ids(25), X, y, h);
  for (int i = 0; i < 25; ++i) {
    const Prediction p = predict(fit, X.row(i).transpose());
    EXPECT_LE(std::abs(p.mean - y(i)), 1e-6);
    EXPECT_LE(p.scale2, 1e-6 * fit.psi / 25);
  }
}

TEST(Predict, RevertsToPriorFarAway) {
  std::mt19937_64 gen(73);
  const Hyper h{0.7, 1e-6};
  const RowMatrix X = oracle::random_design(gen, 10, 2, -1.0, 1.0);
  const Vector y = oracle::toy_responses(X);
  const GpFit fit = fit_gp(iota_ids(10), X, y, h);
  Vector x(2);
  x << 500.0, 500.0;
  const Prediction p = predict(fit, x);
  EXPECT_EQ(p.mean, 0.0);
  EXPECT_NEAR(p.scale2, fit.psi * (1.0 + h.eta) / 10, 1e-12);
}

TEST(Predict, MatchesDenseOracle) {
  std::mt19937_64 gen(79);
  const Hyper h{0.5, 1e-6};
  const RowMatrix X = oracle::random_design(gen, 10, 2, -1.0, 1.0);
  const Vector y = oracle::toy_responses(X);
  const GpFit fit = fit_gp(iota_ids(10), X, y, h);
  for (int rep = 0; rep < 10; ++rep) {
    const Vector x = oracle::random_design(gen, 1, 2, -1.5, 1.5)
                         .row(0)
                         .transpose();
    const oracle::DensePred d = oracle::dense_predict(X, y, h, x);
    const Prediction p = predict(fit, x);
    EXPECT_NEAR(p.mean, d.mean, 1e-10);
    EXPECT_NEAR(p.scale2, d.scale2, 1e-10);
    EXPECT_NEAR(p.variance, d.variance, 1e-10);
    EXPECT_EQ(p.dof, 10);
  }
}

TEST(Predict, NoSecondMomentBelowThreePoints) {
  RowMatrix X(2, 1);
  X << 0.0, 1.0;
  Vector y(2);
  y << 1.0, 2.0;
  const GpFit fit = fit_gp(iota_ids(2), X, y, Hyper{1.0, 1e-6});
  Vector x(1);
  x << 0.5;
  const Prediction p = predict(fit, x);
  EXPECT_TRUE(std::isnan(p.variance));
  EXPECT_GE(p.scale2, 0.0);
}

TEST(PredictDtheta, MatchesFiniteDifferences) {
  std::mt19937_64 gen(83);
  for (int rep = 0; rep < 5; ++rep) {
    const Hyper h{0.4 + 0.25 * rep, 1e-6};
    const RowMatrix X = oracle::random_design(gen, 25, 2, -1.5, 1.5);
    const Vector y = oracle::toy_responses(X);
    const GpFit fit = fit_gp(iota_ids(25), X, y, h);
    const Vector x = oracle::random_design(gen, 1, 2, -1.0, 1.0)
                         .row(0)
                         .transpose();
    const localgp::PredictDerivs d = predict_dtheta(fit, x);

    const auto mu = [&](double t) {
      return oracle::dense_predict(X, y, Hyper{t, h.eta}, x).mean;
    };
    const auto V = [&](double t) {
      return oracle::dense_predict(X, y, Hyper{t, h.eta}, x).variance;
    };
    // Second derivatives are differenced through the independent dense
    // first-derivative oracle: a raw second difference of values has a
    // noise floor above the 1e-4 gate.
    const auto dmu_o = [&](double t) {
      return oracle::dense_predict_dtheta(X, y, Hyper{t, h.eta}, x).dmu;
    };
    const auto dV_o = [&](double t) {
      return oracle::dense_predict_dtheta(X, y, Hyper{t, h.eta}, x).dV;
    };
    const double s1 = 1e-5 * h.theta, s2 = 1e-4 * h.theta;
    EXPECT_LE(oracle::rel_err(d.dmu, oracle::fd1(mu, h.theta, s1)), 1e-4);
    EXPECT_LE(oracle::rel_err(d.d2mu, oracle::fd1(dmu_o, h.theta, s2)), 1e-4);
    EXPECT_LE(oracle::rel_err(d.dV, oracle::fd1(V, h.theta, s1)), 1e-4);
    EXPECT_LE(oracle::rel_err(d.d2V, oracle::fd1(dV_o, h.theta, s2)), 1e-4);
  }
}

TEST(PredictDtheta, ZeroResponsesZeroDerivatives) {
  std::mt19937_64 gen(89);
  const Hyper h{0.7, 1e-6};
  const RowMatrix X = oracle::random_design(gen, 10, 2, -1.0, 1.0);
  const GpFit fit = fit_gp(iota_ids(10), X, Vector::Zero(10), h);
  Vector x(2);
  x << 0.2, 0.4;
  const localgp::PredictDerivs d = predict_dtheta(fit, x);
  EXPECT_EQ(d.dmu, 0.0);
  EXPECT_EQ(d.d2mu, 0.0);
  EXPECT_EQ(d.dV, 0.0);
  EXPECT_EQ(d.d2V, 0.0);
}

TEST(FisherInfo, DefinitionAndSecondOrderCondition) {
  std::mt19937_64 gen(97);
  const Hyper h{0.7, 1e-6};
  const GpFit fit = random_fit(gen, 30, 2, h);
  EXPECT_EQ(fisher_info(fit), -loglik_dtheta(fit).second);

  const Vector y = oracle::gp_draw(fit.x_sub, Hyper{0.8, 1e-6}, gen);
  const GpFit gfit = fit_gp(fit.indices, fit.x_sub, y, Hyper{0.5, 1e-6});
  const MleResult res = mle_theta(gfit, 1e-3, 1e3);
  if (!res.boundary) {
    const GpFit at_hat =
        fit_gp(fit.indices, fit.x_sub, y, Hyper{res.theta_hat, 1e-6});
    EXPECT_GE(fisher_info(at_hat), 0.0);
  }
}

TEST(Predict, NestedDesignsShrinkBracket) {
  // Monotone information: v_{j+1}(x) <= v_j(x) for nested designs.
  std::mt19937_64 gen(101);
  const Hyper h{0.7, 1e-6};
  const RowMatrix X = oracle::random_design(gen, 20, 2, -1.0, 1.0);
  const Vector y = oracle::toy_responses(X);
  Vector x(2);
  x << 0.1, -0.3;
  double prev = 1e300;
  for (int j = 3; j <= 20; ++j) {
    const GpFit fit = fit_gp(iota_ids(j), X.topRows(j), y.head(j), h);
    const Prediction p = predict(fit, x);
    const double v = p.scale2 * j / fit.psi;
    EXPECT_LE(v, prev + 1e-12);
    prev = v;
  }
}
