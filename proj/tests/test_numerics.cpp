#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "mzip/numerics.hpp"

using namespace mzip;

namespace {

// Maclaurin series of erf in long double; accurate to ~1e-18 for |x| <= 3.
long double erf_series(long double x) {
  long double term = x, sum = x;
  for (int n = 1; n < 200; ++n) {
    term *= -x * x / n;
    const long double add = term / (2 * n + 1);
    sum += add;
    if (std::fabs(add) < 1e-24L) break;
  }
  return sum * 2.0L / std::sqrt(std::numbers::pi_v<long double>);
}

long double phi_oracle(long double x) { return 0.5L * (1.0L + erf_series(x / std::sqrt(2.0L))); }

double bisect_quantile(double p) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (norm_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double gaussian_moment(int k) {
  if (k % 2) return 0.0;
  return std::tgamma((k + 1) / 2.0);
}

}  // namespace

TEST(NormCdf, CentreAndSaturation) {
  EXPECT_EQ(norm_cdf(0.0), 0.5);
  EXPECT_EQ(norm_cdf(40.0), 1.0);
  EXPECT_EQ(norm_cdf(-40.0) >= 0.0, true);
  EXPECT_LT(norm_cdf(-40.0), 1e-300);
}

TEST(NormCdf, MatchesErfSeriesOracle) {
  EXPECT_NEAR(norm_cdf(1.959964), static_cast<double>(phi_oracle(1.959964L)), 1e-14);
  EXPECT_NEAR(norm_cdf(1.959964), 0.975, 1e-6);
  for (double x = -3.0; x <= 3.0; x += 0.125) {
    EXPECT_NEAR(norm_cdf(x), static_cast<double>(phi_oracle(x)), 1e-14) << "x=" << x;
  }
}

TEST(NormCdf, SymmetryAndMonotone) {
  double prev = 0.0;
  for (double x = -10.0; x <= 10.0; x += 0.01) {
    EXPECT_NEAR(norm_cdf(-x), 1.0 - norm_cdf(x), 1e-15);
    EXPECT_GE(norm_cdf(x), prev);
    prev = norm_cdf(x);
  }
}

TEST(LogNormCdf, AgreesWithLogOfCdfAndIsFiniteInTail) {
  for (double x = -30.0; x <= 5.0; x += 0.5) {
    EXPECT_NEAR(log_norm_cdf(x), std::log(norm_cdf(x)), 1e-10 * (1.0 + std::abs(std::log(norm_cdf(x)))));
  }
  // Continuity across the switch to the asymptotic series.
  EXPECT_NEAR(log_norm_cdf(-35.0 + 1e-9), log_norm_cdf(-35.0 - 1e-9), 1e-6);
  EXPECT_TRUE(std::isfinite(log_norm_cdf(-200.0)));
  EXPECT_NEAR(log_norm_cdf(-200.0), -0.5 * 200.0 * 200.0 - std::log(200.0) - 0.5 * std::log(2.0 * std::numbers::pi),
              1e-4);
}

TEST(NormQuantile, KnownValues) {
  EXPECT_EQ(norm_quantile(0.5), 0.0);
  EXPECT_NEAR(norm_quantile(0.975), 1.959963984540054, 1e-12);
  EXPECT_NEAR(norm_quantile(0.1072), bisect_quantile(0.1072), 1e-12);
  EXPECT_NEAR(norm_quantile(0.1072), -1.242, 1e-3);
}

TEST(NormQuantile, InvertsCdfAndIsOdd) {
  for (double p = 1e-10; p < 1.0; p = p < 0.01 ? p * 3.0 : p + 0.0137) {
    const double q = norm_quantile(p);
    EXPECT_NEAR(norm_cdf(q), p, 1e-12 * std::max(p, 1e-3)) << "p=" << p;
    // 1 - p is rounded to a multiple of eps/2, which moves the quantile by up to eps/phi(q).
    const double cond = 4.0 * std::numeric_limits<double>::epsilon() / norm_pdf(q);
    EXPECT_NEAR(norm_quantile(1.0 - p), -q, 1e-12 + cond) << "p=" << p;
  }
}

TEST(NormQuantile, IdentityOnCdfRange) {
  // Lower half: p = Phi(x) carries full relative precision.
  for (double x = -8.0; x <= 0.0; x += 0.05) EXPECT_NEAR(norm_quantile(norm_cdf(x)), x, 1e-10) << "x=" << x;
  // Upper half: Phi(x) is within eps of 1 near x = 8, so the recoverable accuracy
  // is bounded by the conditioning eps / phi(x).
  for (double x = 0.0; x <= 8.0; x += 0.05) {
    const double p = norm_cdf(x);
    if (p >= 1.0) continue;
    const double cond = 2.0 * std::numeric_limits<double>::epsilon() / norm_pdf(x);
    EXPECT_NEAR(norm_quantile(p), x, 1e-10 + cond) << "x=" << x;
  }
}

TEST(NormQuantile, RejectsBoundary) {
  for (double p : {0.0, 1.0, -0.1, 1.5, std::nan("")}) {
    try {
      norm_quantile(p);
      FAIL() << "expected DomainError for p=" << p;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::domain_error);
    }
  }
}

TEST(LogSumExp, Basics) {
  const std::vector<double> a{0.0, 0.0};
  EXPECT_NEAR(log_sum_exp(a), std::log(2.0), 1e-15);
  const std::vector<double> b{1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(b), 1000.0 + std::log(2.0), 1e-12);
  const std::vector<double> c{-700.0, -700.0};
  EXPECT_NEAR(log_sum_exp(c), -700.0 + std::log(2.0), 1e-12);
  try {
    log_sum_exp(std::vector<double>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_input);
  }
}

TEST(LogSumExp, MatchesNaiveSum) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> v(10);
    double naive = 0.0;
    for (auto& x : v) {
      x = u(rng);
      naive += std::exp(x);
    }
    EXPECT_NEAR(log_sum_exp(v), std::log(naive), 1e-12 * std::abs(std::log(naive)) + 1e-15);
  }
}

TEST(GaussHermite, ClosedFormOrderTwo) {
  const auto r = gauss_hermite(2);
  ASSERT_EQ(r.order(), 2);
  EXPECT_NEAR(r.nodes[0], -1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(r.nodes[1], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(r.weights[0], std::sqrt(std::numbers::pi) / 2.0, 1e-15);
  EXPECT_NEAR(r.weights[1], std::sqrt(std::numbers::pi) / 2.0, 1e-15);
}

TEST(GaussHermite, FourthMomentAtTwenty) {
  const auto r = gauss_hermite(20);
  double s = 0.0;
  for (int j = 0; j < 20; ++j) s += r.weights[j] * std::pow(r.nodes[j], 4);
  EXPECT_NEAR(s, 0.75 * std::sqrt(std::numbers::pi), 1e-12);
}

TEST(GaussHermite, MatchesGolubWelschOracle) {
  for (int Q : {5, 20, 40}) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(Q, Q);
    for (int i = 1; i < Q; ++i) J(i, i - 1) = J(i - 1, i) = std::sqrt(i / 2.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    const auto r = gauss_hermite(Q);
    for (int j = 0; j < Q; ++j) {
      EXPECT_NEAR(r.nodes[j], es.eigenvalues()[j], 1e-12) << "Q=" << Q << " j=" << j;
      const double w = std::sqrt(std::numbers::pi) * es.eigenvectors()(0, j) * es.eigenvectors()(0, j);
      EXPECT_NEAR(r.weights[j], w, 1e-12) << "Q=" << Q << " j=" << j;
    }
  }
}

TEST(GaussHermite, RuleInvariantsForEveryOrder) {
  for (int Q = 2; Q <= 100; ++Q) {
    const auto r = gauss_hermite(Q);
    ASSERT_EQ(r.order(), Q);
    double wsum = 0.0;
    for (int j = 0; j < Q; ++j) {
      EXPECT_GT(r.weights[j], 0.0);
      if (j > 0) {
        EXPECT_LT(r.nodes[j - 1], r.nodes[j]);
      }
      EXPECT_NEAR(r.nodes[j], -r.nodes[Q - 1 - j], 1e-12);
      wsum += r.weights[j];
    }
    EXPECT_NEAR(wsum, std::sqrt(std::numbers::pi), 1e-12) << "Q=" << Q;
    // Exact for polynomial degree <= 2Q - 1.
    for (int k = 0; k <= std::min(6, 2 * Q - 1); ++k) {
      double s = 0.0;
      for (int j = 0; j < Q; ++j) s += r.weights[j] * std::pow(r.nodes[j], k);
      const double m = gaussian_moment(k);
      EXPECT_NEAR(s, m, 1e-10 * std::max(std::abs(m), 1.0)) << "Q=" << Q << " k=" << k;
    }
  }
}

TEST(GaussHermite, RejectsOutOfRange) {
  for (int Q : {0, 1, 101}) {
    try {
      gauss_hermite(Q);
      FAIL() << Q;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::domain_error);
    }
  }
}

TEST(ChiSquare, UpperTail) {
  EXPECT_EQ(chi2_sf(0.0, 1), 1.0);
  EXPECT_NEAR(chi2_sf(3.841458820694124, 1), 0.05, 1e-12);
  // df = 2 has the closed form exp(-x/2).
  for (double x : {0.5, 2.0, 10.0}) EXPECT_NEAR(chi2_sf(x, 2), std::exp(-x / 2.0), 1e-14);
}
