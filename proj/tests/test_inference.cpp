#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>

#include "mzip/inference.hpp"
#include "test_support.hpp"

using namespace mzip;
using mzip::testing::panel_spec;
using mzip::testing::small_panel;

namespace {

template <class F>
Errc error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::config_error;
}

Dataset with_counts(Dataset ds, std::int64_t value) {
  for (auto& s : ds.subjects)
    for (auto& o : s.obs) o.y = value;
  return ds;
}

double sup_distance_gamma_alpha(const ParameterVector& a, const ParameterVector& b) {
  const double dg = (a.gamma() - b.gamma()).cwiseAbs().maxCoeff();
  const double da = (a.alpha() - b.alpha()).cwiseAbs().maxCoeff();
  return std::max(dg, da);
}

FitResult hand_built_fit() {
  FitResult f;
  f.theta_hat = ParameterVector::from_blocks(Eigen::Vector2d(0.4, -1.2), Eigen::VectorXd::Constant(1, 2.0),
                                             Eigen::VectorXd::Constant(1, -0.3), Eigen::VectorXd::Constant(1, 0.1),
                                             Eigen::VectorXd::Constant(1, 0.05));
  f.columns = {{"intercept", "x"}, {"intercept"}, {"intercept"}, {"intercept"}, {"intercept"}};
  f.se = Eigen::VectorXd(6);
  f.se << 0.2, 0.5, 0.1, 0.0, 0.3, 0.02;
  return f;
}

}  // namespace

TEST(Aic, PublishedValues) {
  EXPECT_EQ(aic(0.0, 0), 0.0);
  EXPECT_NEAR(aic(-24228.155, 15), 48486.310, 1e-9);
  EXPECT_NEAR(aic(-25077.430, 14), 50182.860, 1e-9);
  EXPECT_EQ(error_code_of([] { aic(1.0, -1); }), Errc::domain_error);
}

TEST(Lrt, PublishedAndQuantileValues) {
  const auto same = lrt(-10.0, -10.0, 1);
  EXPECT_EQ(same.statistic, 0.0);
  EXPECT_EQ(same.p_value, 1.0);
  const auto m34 = lrt(-24259.092, -24228.155, 1);
  EXPECT_NEAR(m34.statistic, 61.874, 1e-8);
  EXPECT_LT(m34.p_value, 1e-4);
  const auto m12 = lrt(-25115.404, -25077.430, 1);
  EXPECT_NEAR(m12.statistic, 75.948, 1e-8);
  EXPECT_NEAR(lrt(0.0, 3.841 / 2.0, 1).p_value, 0.05, 1e-4);
  EXPECT_EQ(error_code_of([] { lrt(-10.0, -11.0, 1); }), Errc::negative_statistic);
  EXPECT_EQ(error_code_of([] { lrt(-10.0, -9.0, 0); }), Errc::domain_error);
  // Rounding-level violations are tolerated and clamp to zero.
  EXPECT_EQ(lrt(-10.0, -10.0 - 1e-10, 2).statistic, 0.0);
}

TEST(Initialize, RejectsDegenerateZeroBlock) {
  const Dataset ds = small_panel(Family::zip, 40, 3);
  const ModelSpec spec = panel_spec(Family::zip);
  EXPECT_EQ(error_code_of([&] { initialize(with_counts(ds, 0), spec); }), Errc::degenerate_data);
  EXPECT_EQ(error_code_of([&] { initialize(with_counts(ds, 2), spec); }), Errc::degenerate_data);
}

TEST(Initialize, LandsNearTruthOnMostSeeds) {
  const Scenario sc = Scenario::scenario1(300, 100, 555);
  const ModelSpec spec = sc.fit_spec();
  int close = 0;
  for (std::uint64_t rep = 0; rep < 100; ++rep) {
    const Dataset ds = simulate_dataset(sc, rep);
    const ParameterVector init = initialize(ds, spec);
    EXPECT_EQ(init.flat(), initialize(ds, spec).flat());
    if (sup_distance_gamma_alpha(init, sc.truth) <= 1.0) ++close;
  }
  EXPECT_GE(close, 90);
}

TEST(Fit, StartAtTruthConvergesQuickly) {
  const Dataset ds = small_panel(Family::zip, 300, 42);
  const ModelSpec spec = panel_spec(Family::zip);
  // Polish the truth to the maximum on this sample, then restart from there.
  const FitResult first = fit(ds, spec, Scenario::scenario1(1, 1).truth);
  ASSERT_TRUE(first.converged);
  EXPECT_LT(first.final_grad_norm, spec.grad_tol);
  const FitResult again = fit(ds, spec, first.theta_hat);
  EXPECT_TRUE(again.converged);
  EXPECT_LE(again.iterations, 3);
  EXPECT_LT(again.final_grad_norm, spec.grad_tol);
}

TEST(Fit, RecoversGeneratingValuesAndTracesAscent) {
  const Scenario sc = Scenario::scenario1(300, 1, 20240101);
  const Dataset ds = simulate_dataset(sc, 0);
  const ModelSpec spec = sc.fit_spec();
  const FitResult f = fit(ds, spec, initialize(ds, spec));
  ASSERT_TRUE(f.converged);
  EXPECT_LT(f.final_grad_norm, spec.grad_tol);
  const auto& sz = f.theta_hat.sizes();
  for (Eigen::Index j = 0; j < sz.p1 + sz.p2; ++j) {
    EXPECT_LT(std::abs(f.theta_hat.flat()[j] - sc.truth.flat()[j]), 3.0 * f.se[j]) << j;
  }
  for (std::size_t i = 1; i < f.loglik_trace.size(); ++i) EXPECT_GE(f.loglik_trace[i], f.loglik_trace[i - 1]) << i;
  EXPECT_EQ(f.aic, -2.0 * f.loglik + 2.0 * static_cast<double>(f.k()));
  EXPECT_EQ(f.loglik, f.loglik_trace.back());

  EXPECT_LT((f.vcov - f.vcov.transpose()).cwiseAbs().maxCoeff(), 1e-12 * f.vcov.cwiseAbs().maxCoeff());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(f.vcov);
  EXPECT_GT(es.eigenvalues().minCoeff(), -1e-8 * f.vcov.trace() / static_cast<double>(f.k()));
  for (Eigen::Index j = 0; j < f.k(); ++j) EXPECT_EQ(f.se[j], std::sqrt(f.vcov(j, j)));
  EXPECT_EQ(f.n_subjects, 300u);
  EXPECT_EQ(f.n_obs, ds.n_obs());
}

TEST(Fit, ZinbReportsDispersionWithDeltaMethodError) {
  const Scenario sc = Scenario::scenario2(300, 1, 20240202);
  const Dataset ds = simulate_dataset(sc, 0);
  const ModelSpec spec = sc.fit_spec();
  const FitResult f = fit(ds, spec, initialize(ds, spec));
  ASSERT_TRUE(f.converged);
  ASSERT_TRUE(f.nu_hat && f.se_nu);
  EXPECT_EQ(*f.nu_hat, std::exp(f.theta_hat.log_nu()));
  EXPECT_NEAR(*f.se_nu, *f.nu_hat * f.se[f.k() - 1], 1e-15);
  EXPECT_LT(std::abs(*f.nu_hat - 0.8), 3.0 * *f.se_nu);
}

TEST(Fit, IsDeterministicAcrossThreadCounts) {
  const Dataset ds = small_panel(Family::zinb, 80, 13);
  ModelSpec spec = panel_spec(Family::zinb, 10);
  const ParameterVector init = initialize(ds, spec);
  spec.threads = 1;
  const FitResult a = fit(ds, spec, init);
  spec.threads = 4;
  const FitResult b = fit(ds, spec, init);
  EXPECT_EQ(a.theta_hat.flat(), b.theta_hat.flat());
  EXPECT_EQ(a.vcov, b.vcov);
  EXPECT_EQ(a.loglik_trace, b.loglik_trace);
  EXPECT_EQ(a.iterations, b.iterations);
}

TEST(Fit, NestedCorrelationModelNeverLosesLikelihood) {
  const Scenario sc = Scenario::scenario1(200, 1, 99);
  Dataset ds = simulate_dataset(sc, 0);
  // Give every subject a (1, group) correlation design; the null model reads only the intercept.
  for (auto& s : ds.subjects) s.w = Eigen::Vector2d(1.0, s.obs.front().x1[1]);
  ModelSpec null_spec = sc.fit_spec();
  null_spec.covariates.rho = {"intercept", "group"};
  Dataset null_ds = ds;
  for (auto& s : null_ds.subjects) s.w = s.w.head(1).eval();
  null_spec.covariates.rho = {"intercept"};
  const FitResult null_fit = fit(null_ds, null_spec, initialize(null_ds, null_spec));

  ModelSpec alt_spec = null_spec;
  alt_spec.covariates.rho = {"intercept", "group"};
  const ParameterVector& t = null_fit.theta_hat;
  const ParameterVector start = ParameterVector::from_blocks(t.gamma(), t.alpha(), t.zeta1(), t.zeta2(),
                                                             Eigen::Vector2d(t.delta()[0], 0.0));
  const FitResult alt_fit = fit(ds, alt_spec, start);
  EXPECT_GE(alt_fit.loglik, null_fit.loglik - 1e-4);
  EXPECT_EQ(alt_fit.k(), null_fit.k() + 1);
  EXPECT_EQ(lrt(null_fit.loglik, alt_fit.loglik, 1).statistic >= 0.0, true);
}

TEST(Fit, RejectsMismatchedStart) {
  const Dataset ds = small_panel(Family::zip, 20, 1);
  EXPECT_EQ(error_code_of([&] { fit(ds, panel_spec(Family::zinb), Scenario::scenario1(1, 1).truth); }),
            Errc::dimension_mismatch);
}

TEST(SpdInverse, RidgeOnlyWhenSingular) {
  Eigen::Matrix3d A;
  A << 4, 1, 0, 1, 3, 1, 0, 1, 2;
  const auto ok = detail::spd_inverse(A);
  EXPECT_EQ(ok.ridge, 0.0);
  EXPECT_TRUE((ok.inverse * A).isApprox(Eigen::Matrix3d::Identity(), 1e-12));

  const Eigen::Vector3d g(1.0, 2.0, 3.0);
  const Eigen::Matrix3d rank1 = g * g.transpose();
  const auto ridged = detail::spd_inverse(rank1);
  EXPECT_NEAR(ridged.ridge, 1e-8 * rank1.trace() / 3.0, 1e-20);
  EXPECT_TRUE(ridged.inverse.allFinite());
}

TEST(CovarianceProfiles, PublishedSledProfiles) {
  FitResult f;
  f.theta_hat = ParameterVector::from_blocks(Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(),
                                             Eigen::Vector2d(-0.056, -0.280), Eigen::Vector2d(-0.118, -0.123),
                                             Eigen::Vector2d(2.994, -0.818), 0.717);
  const double log_age = 3.637;
  // Gender is coded 1 for female, 0 for male.
  const std::vector<CovariateProfile> profiles{
      {Eigen::Vector2d(1.0, 1.0), Eigen::Vector2d(1.0, 1.0), Eigen::Vector2d(1.0, log_age)},
      {Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(1.0, log_age)},
      {Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0.0, 0.0)},
  };
  const auto out = covariance_profiles(f, profiles);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_NEAR(out[0].sigma1, 0.715, 5e-4);
  EXPECT_NEAR(out[0].sigma2, 0.786, 5e-4);
  EXPECT_NEAR(out[1].sigma1, 0.946, 5e-4);
  EXPECT_NEAR(out[1].sigma2, 0.889, 5e-4);
  EXPECT_NEAR(out[0].rho, 0.019, 5e-4);
  const Eigen::Matrix2d female{{0.511, 0.011}, {0.011, 0.618}};
  const Eigen::Matrix2d male{{0.895, 0.016}, {0.016, 0.790}};
  EXPECT_LT((out[0].Sigma - female).cwiseAbs().maxCoeff(), 1e-3);
  // The published male variance squares the rounded 0.946; the unrounded value is 0.8944.
  EXPECT_LT((out[1].Sigma - male).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_EQ(out[2].rho, 0.0);

  const std::vector<CovariateProfile> bad{{Eigen::Vector3d::Ones(), Eigen::Vector2d::Ones(), Eigen::Vector2d::Ones()}};
  EXPECT_EQ(error_code_of([&] { covariance_profiles(f, bad); }), Errc::dimension_mismatch);
}

TEST(CovarianceProfiles, ZeroCoefficientsGiveIdentity) {
  FitResult f;
  f.theta_hat = ParameterVector::from_blocks(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1),
                                             Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1),
                                             Eigen::VectorXd::Zero(1));
  const auto out = covariance_profiles(f, {{Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1)}});
  EXPECT_EQ(out[0].Sigma, Eigen::Matrix2d::Identity());
}

TEST(WaldTable, IntervalsAndDegenerateErrors) {
  const FitResult f = hand_built_fit();
  const auto rows = wald_table(f, 0.95);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[1].name, "gamma[x]");
  for (const auto& r : rows) {
    // The 97.5% normal quantile is 1.959964, so the half-width is 1.96 SE to within 4e-5 SE.
    EXPECT_NEAR(r.ci_hi - r.estimate, 1.959963984540054 * r.se, 1e-12);
    EXPECT_NEAR(r.estimate - r.ci_lo, 1.96 * r.se, 4e-5 * r.se + 1e-15);
  }
  EXPECT_EQ(rows[1].z, -1.2 / 0.5);
  EXPECT_NEAR(rows[1].p, 2.0 * norm_cdf(-2.4), 1e-15);
  EXPECT_FALSE(rows[3].p_defined);
  EXPECT_TRUE(std::isnan(rows[3].p));
  EXPECT_EQ(rows[3].ci_lo, rows[3].estimate);
  EXPECT_EQ(rows[3].ci_hi, rows[3].estimate);
  EXPECT_TRUE(rows[0].p_defined);

  const auto wide = wald_table(f, 0.99);
  EXPECT_NEAR(wide[0].ci_hi - wide[0].estimate, 2.5758293035489 * 0.2, 1e-12);
  EXPECT_EQ(error_code_of([&] { wald_table(f, 1.0); }), Errc::domain_error);
}
