#include <doctest.h>

#include <random>

#include "macv/losses.hpp"
#include "oracles.hpp"

using namespace macv;

TEST_CASE("bernoulli kernel values") {
  CHECK(q_bernoulli(1.0, 0.5) == doctest::Approx(-0.6931471805599453).epsilon(1e-12));
  CHECK(q_bernoulli(0.0, 0.5) == doctest::Approx(-0.6931471805599453).epsilon(1e-12));
  // frozen from the quadrature oracle of the quasi-likelihood integral
  CHECK(q_bernoulli(1.0, 0.9) == doctest::Approx(-0.10536051565782628).epsilon(1e-10));
  CHECK(q_bernoulli(1.0, 0.9) == doctest::Approx(oracle::q_bernoulli(1.0, 0.9)).epsilon(1e-8));
  CHECK_THROWS_AS(q_bernoulli(1.2, 0.5), Error);
}

TEST_CASE("bernoulli kernel matches quadrature up to the dropped y-constant") {
  for (double y : {0.1, 0.35, 0.5, 0.92}) {
    for (double f : {0.05, 0.4, 0.77}) {
      CHECK(q_bernoulli(y, f) == doctest::Approx(oracle::q_bernoulli(y, f)).epsilon(1e-7));
    }
  }
}

TEST_CASE("poisson kernel values") {
  CHECK(q_poisson(0.0, 1.0) == doctest::Approx(-1.0).epsilon(1e-14));
  // frozen from the quadrature oracle
  CHECK(q_poisson(2.0, 2.0) == doctest::Approx(-0.6137056388801094).epsilon(1e-12));
  CHECK(q_poisson(5.0, 5.0) == doctest::Approx(3.0471895621705014).epsilon(1e-12));
  CHECK(q_poisson(2.0, 2.0) == doctest::Approx(oracle::q_poisson(2.0, 2.0)).epsilon(1e-9));
  CHECK(q_poisson(3.0, 1.7) == doctest::Approx(oracle::q_poisson(3.0, 1.7)).epsilon(1e-9));
  CHECK_THROWS_AS(q_poisson(1.0, 0.0), Error);
  CHECK_THROWS_AS(q_poisson(-1.0, 1.0), Error);
}

TEST_CASE("squared kernel values") {
  CHECK(q_squared(1.0, 1.0) == 0.0);
  CHECK(q_squared(2.0, 0.0) == -2.0);
  CHECK(q_squared(1.5, 0.5) == -0.5);
}

TEST_CASE("check kernel values") {
  CHECK(q_check(0.7, 0.7, 0.3) == 0.0);
  CHECK(q_check(1.0, 0.0, 0.5) == doctest::Approx(-0.25));
  CHECK(q_check(-1.0, 0.0, 0.25) == doctest::Approx(-0.375));
  CHECK_THROWS_AS(q_check(1.0, 0.0, 1.5), Error);
}

TEST_CASE("subject_q sums coordinates") {
  Eigen::VectorXd y1(1), f1(1);
  y1 << 2.0;
  f1 << 0.5;
  CHECK(subject_q(LossSpec::squared(), y1, f1) == q_squared(2.0, 0.5));

  Eigen::VectorXd y(2), f(2);
  y << 1.0, 2.0;
  f << 1.0, 2.0;
  CHECK(subject_q(LossSpec::squared(), y, f) == 0.0);

  y << 1.0, 0.0;
  f << 0.5, 0.5;
  CHECK(subject_q(LossSpec::bernoulli(), y, f) == doctest::Approx(-1.3862943611198906));

  Eigen::VectorXd f3(3);
  CHECK_THROWS_AS(subject_q(LossSpec::squared(), y, f3), Error);
}

TEST_CASE("kernels are concave in f on random triples") {
  std::mt19937_64 rng(314);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto concave = [&](const LossSpec& loss, double y, double f1, double f2) {
    const double lam = unif(rng);
    const double lhs = q_kernel(loss, y, lam * f1 + (1.0 - lam) * f2);
    const double rhs = lam * q_kernel(loss, y, f1) + (1.0 - lam) * q_kernel(loss, y, f2);
    CHECK(lhs >= rhs - 1e-10);
  };
  for (int t = 0; t < 300; ++t) {
    concave(LossSpec::bernoulli(), unif(rng), 0.01 + 0.98 * unif(rng), 0.01 + 0.98 * unif(rng));
    concave(LossSpec::poisson(), 5.0 * unif(rng), 0.1 + 5.0 * unif(rng), 0.1 + 5.0 * unif(rng));
    concave(LossSpec::squared(), 4.0 * unif(rng) - 2.0, 2.0 * unif(rng), 2.0 * unif(rng));
    concave(LossSpec::check(0.1 + 0.8 * unif(rng)), unif(rng), unif(rng), unif(rng));
  }
}

TEST_CASE("kernel maximizer sits at f = y (golden-section search)") {
  for (double y : {0.2, 0.5, 0.8}) {
    const double arg = oracle::golden_max([y](double f) { return q_bernoulli(y, f); }, 0.01, 0.99);
    CHECK(arg == doctest::Approx(y).epsilon(1e-5));
  }
  for (double y : {0.5, 2.0, 7.0}) {
    const double arg =
        oracle::golden_max([y](double f) { return q_poisson(y, f); }, 0.05, 20.0, 1e-9);
    CHECK(arg == doctest::Approx(y).epsilon(1e-5));
  }
  for (double y : {-1.0, 0.3}) {
    const double arg =
        oracle::golden_max([y](double f) { return q_squared(y, f); }, -5.0, 5.0, 1e-9);
    CHECK(arg == doctest::Approx(y).epsilon(1e-6));
  }
}

TEST_CASE("check-loss forward/backward differences bracket the subgradient at the kink") {
  const double alpha = 0.3;
  const double r = 1.2;  // kink at u = r
  const double h = 1e-7;
  const double fwd = (q_check(r, r + h, alpha) - q_check(r, r, alpha)) / h;
  const double bwd = (q_check(r, r, alpha) - q_check(r, r - h, alpha)) / h;
  // subgradient set of u -> Q at the kink is [ (alpha-1)/2, alpha/2 ]
  const double lo = 0.5 * (alpha - 1.0);
  const double hi = 0.5 * alpha;
  CHECK(std::min(fwd, bwd) <= lo + 1e-6);
  CHECK(std::max(fwd, bwd) >= hi - 1e-6);
  const double analytic = q_kernel_df(LossSpec::check(alpha), r, r);
  CHECK(analytic >= lo - 1e-12);
  CHECK(analytic <= hi + 1e-12);
}
