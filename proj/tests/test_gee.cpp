#include <doctest.h>

#include <random>

#include "macv/estimators.hpp"
#include "macv/simgen.hpp"
#include "oracles.hpp"

using namespace macv;

namespace {

Design1Config binary_cfg(Eigen::Index n, std::uint64_t seed, double rho = 0.3) {
  Design1Config cfg;
  cfg.n = n;
  cfg.cluster_size = 4;
  cfg.beta = Eigen::VectorXd::Zero(6);
  cfg.beta << 0.2, 0.0, 0.0, 0.0, -0.5, 0.1;
  cfg.rho = rho;
  cfg.response = ResponseKind::Binary;
  cfg.seed = seed;
  return cfg;
}

CandidateSpec gee_spec(Family fam, std::vector<int> subset, WorkingCorr wc) {
  CandidateSpec s;
  s.family = fam;
  s.covariate_subset = std::move(subset);
  s.working_correlation = wc;
  return s;
}

Eigen::VectorXd total_score(const FitState& fit, const ClusteredDataset& data,
                            const Eigen::VectorXd& theta) {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(theta.size());
  for (const auto& ui : gee_score_subjects(fit, data, theta)) u += ui;
  return u;
}

Eigen::MatrixXd total_jacobian(const FitState& fit, const ClusteredDataset& data,
                               const Eigen::VectorXd& theta) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(theta.size(), theta.size());
  for (const auto& Ji : gee_jacobian_subjects(fit, data, theta)) J += Ji;
  return J;
}

}  // namespace

TEST_CASE("intercept-only bernoulli GEE recovers logit of the mean") {
  auto truth = gen_binary_ar1(binary_cfg(60, 11, 0.0));
  auto fit = gee_fit(gee_spec(Family::GeeBernoulli, {}, WorkingCorr::Independence), truth.dataset);
  REQUIRE(fit.converged);
  double ybar = 0.0;
  double nobs = 0.0;
  for (const auto& s : truth.dataset.subjects) {
    ybar += s.y.sum();
    nobs += static_cast<double>(s.y.size());
  }
  ybar /= nobs;
  CHECK(fit.theta[0] == doctest::Approx(std::log(ybar / (1.0 - ybar))).epsilon(1e-7));
}

TEST_CASE("n_i = 1 makes the working correlation vacuous") {
  auto cfg = binary_cfg(150, 5, 0.0);
  cfg.cluster_size = 1;
  auto truth = gen_binary_ar1(cfg);
  auto a = gee_fit(gee_spec(Family::GeeBernoulli, {3}, WorkingCorr::Ar1), truth.dataset);
  auto b = gee_fit(gee_spec(Family::GeeBernoulli, {3}, WorkingCorr::Independence), truth.dataset);
  REQUIRE(a.converged);
  CHECK((a.theta - b.theta).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("independence bernoulli GEE matches the IRLS logistic oracle") {
  auto truth = gen_binary_ar1(binary_cfg(200, 23, 0.0));
  auto fit = gee_fit(gee_spec(Family::GeeBernoulli, {3}, WorkingCorr::Independence), truth.dataset);
  REQUIRE(fit.converged);

  const Eigen::Index nobs = truth.dataset.total_obs();
  Eigen::MatrixXd X(nobs, 2);
  Eigen::VectorXd y(nobs);
  Eigen::Index r = 0;
  for (const auto& s : truth.dataset.subjects) {
    for (Eigen::Index j = 0; j < s.size(); ++j, ++r) {
      X(r, 0) = 1.0;
      X(r, 1) = s.x(j, 3);
      y[r] = s.y[j];
    }
  }
  Eigen::VectorXd beta = oracle::irls_logistic(X, y);
  CHECK((fit.theta - beta).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("gee_predict link inverses") {
  auto truth = gen_binary_ar1(binary_cfg(10, 3, 0.0));
  auto fit = gee_fit(gee_spec(Family::GeeBernoulli, {0}, WorkingCorr::Independence), truth.dataset);

  FitState zero = fit;
  zero.theta.setZero();
  Eigen::MatrixXd xnew = Eigen::MatrixXd::Random(3, truth.dataset.p);
  auto pb = gee_predict(zero, xnew);
  for (Eigen::Index j = 0; j < 3; ++j) CHECK(pb[j] == doctest::Approx(0.5));

  zero.spec.family = Family::GeePoisson;
  auto pp = gee_predict(zero, xnew);
  for (Eigen::Index j = 0; j < 3; ++j) CHECK(pp[j] == doctest::Approx(1.0));

  // eta = 0.2 - 0.5 = -0.3 on a unit covariate row
  FitState hand = fit;
  hand.theta << 0.2, -0.5;
  Eigen::MatrixXd xone = Eigen::MatrixXd::Ones(1, truth.dataset.p);
  CHECK(gee_predict(hand, xone)[0] == doctest::Approx(0.4255574831883411).epsilon(1e-12));
}

TEST_CASE("gee_fit validates response domains") {
  auto truth = gen_binary_ar1(binary_cfg(10, 3, 0.0));
  truth.dataset.subjects[0].y[0] = 0.5;
  CHECK_THROWS_AS(
      gee_fit(gee_spec(Family::GeeBernoulli, {}, WorkingCorr::Independence), truth.dataset),
      Error);
  CHECK_THROWS_AS(
      gee_fit(gee_spec(Family::GeePoisson, {}, WorkingCorr::Independence), truth.dataset), Error);
}

TEST_CASE("score sum vanishes at the fit for every working correlation") {
  auto truth = gen_binary_ar1(binary_cfg(80, 17, 0.3));
  for (WorkingCorr wc :
       {WorkingCorr::Independence, WorkingCorr::Exchangeable, WorkingCorr::Ar1}) {
    auto fit = gee_fit(gee_spec(Family::GeeBernoulli, {0, 3}, wc), truth.dataset);
    REQUIRE(fit.converged);
    CHECK(fit.score_sum().cwiseAbs().maxCoeff() <
          1e-6 * static_cast<double>(fit.q()));
  }
}

TEST_CASE("subject order does not change the estimate") {
  auto truth = gen_binary_ar1(binary_cfg(60, 29, 0.3));
  auto fit = gee_fit(gee_spec(Family::GeeBernoulli, {3, 4}, WorkingCorr::Exchangeable),
                     truth.dataset);
  ClusteredDataset shuffled = truth.dataset;
  std::mt19937_64 rng(4);
  std::shuffle(shuffled.subjects.begin(), shuffled.subjects.end(), rng);
  auto fit2 = gee_fit(gee_spec(Family::GeeBernoulli, {3, 4}, WorkingCorr::Exchangeable), shuffled);
  CHECK((fit.theta - fit2.theta).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("jacobian matches central finite differences of U") {
  auto truth = gen_binary_ar1(binary_cfg(40, 31, 0.3));
  for (WorkingCorr wc : {WorkingCorr::Independence, WorkingCorr::Ar1}) {
    auto fit = gee_fit(gee_spec(Family::GeeBernoulli, {1, 3}, wc), truth.dataset);
    REQUIRE(fit.converged);
    const Eigen::Index q = fit.q();
    const double h = 1e-6;
    Eigen::MatrixXd fd(q, q);
    for (Eigen::Index m = 0; m < q; ++m) {
      Eigen::VectorXd tp = fit.theta, tm = fit.theta;
      tp[m] += h;
      tm[m] -= h;
      fd.col(m) = -(total_score(fit, truth.dataset, tp) - total_score(fit, truth.dataset, tm)) /
                  (2.0 * h);
    }
    const double scale = fd.cwiseAbs().maxCoeff();
    CHECK((fit.jacobian - fd).cwiseAbs().maxCoeff() < 1e-4 * scale);
  }
}

TEST_CASE("hessian tensor slices match finite differences of J") {
  for (Family fam : {Family::GeeBernoulli, Family::GeePoisson}) {
    Design1Config cfg = binary_cfg(40, 37, 0.3);
    TruthBundle t = fam == Family::GeeBernoulli ? gen_binary_ar1(cfg) : [&] {
      Design1Config c2 = cfg;
      c2.response = ResponseKind::Count;
      c2.rho = 0.0;
      return gen_count_ar1(c2);
    }();
    auto fit = gee_fit(gee_spec(fam, {1, 3}, WorkingCorr::Exchangeable), t.dataset);
    REQUIRE(fit.converged);
    const Eigen::Index q = fit.q();
    const double h = 1e-5;
    double scale = 0.0;
    for (const auto& B : fit.hessian_tensor) scale = std::max(scale, B.cwiseAbs().maxCoeff());
    for (Eigen::Index k = 0; k < q; ++k) {
      Eigen::VectorXd tp = fit.theta, tm = fit.theta;
      tp[k] += h;
      tm[k] -= h;
      Eigen::MatrixXd fd =
          (total_jacobian(fit, t.dataset, tp) - total_jacobian(fit, t.dataset, tm)) / (2.0 * h);
      CHECK((fit.hessian_tensor[static_cast<std::size_t>(k)] - fd).cwiseAbs().maxCoeff() <
            1e-3 * scale);
    }
  }
}

TEST_CASE("independence jacobian is symmetric positive definite") {
  auto truth = gen_binary_ar1(binary_cfg(50, 41, 0.0));
  auto fit = gee_fit(gee_spec(Family::GeeBernoulli, {0, 3}, WorkingCorr::Independence),
                     truth.dataset);
  CHECK((fit.jacobian - fit.jacobian.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  Eigen::LLT<Eigen::MatrixXd> llt(fit.jacobian);
  CHECK(llt.info() == Eigen::Success);
}

TEST_CASE("refit_without leaves the estimate fixed when a subject's score is zero") {
  // quadratic objective: SAR with A = 0 reduces to least squares
  ClusteredDataset d;
  d.p = 1;
  for (int i = 0; i < 6; ++i) {
    Subject s;
    s.id = std::to_string(i);
    const double x = static_cast<double>(i) - 2.5;
    s.x = Eigen::MatrixXd::Constant(1, 1, x);
    s.y = Eigen::VectorXd::Constant(1, 2.0 * x);
    d.subjects.push_back(s);
  }
  CandidateSpec spec;
  spec.family = Family::Sar;
  spec.covariate_subset = {0};
  spec.spatial_weights = std::make_shared<Eigen::MatrixXd>(Eigen::MatrixXd::Zero(6, 6));
  auto fit = sar_fit(spec, d);
  CHECK(fit.theta[0] == doctest::Approx(2.0));
  // every u_i = 0 on exact data; removing any subject keeps theta
  auto rf = refit_without(spec, d, 2);
  CHECK(rf.theta[0] == doctest::Approx(fit.theta[0]).epsilon(1e-12));
}

TEST_CASE("refit_without matches the hat-matrix downdating oracle on a linear model") {
  std::mt19937_64 rng(53);
  std::normal_distribution<double> g;
  const int n = 24;
  ClusteredDataset d;
  d.p = 2;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    Subject s;
    s.id = std::to_string(i);
    s.x = Eigen::MatrixXd(1, 2);
    s.x << 1.0, g(rng);
    s.y = Eigen::VectorXd::Constant(1, 1.0 + 0.5 * s.x(0, 1) + 0.3 * g(rng));
    X.row(i) = s.x.row(0);
    y[i] = s.y[0];
    d.subjects.push_back(s);
  }
  CandidateSpec spec;
  spec.family = Family::Sar;
  spec.covariate_subset = {0, 1};
  spec.spatial_weights = std::make_shared<Eigen::MatrixXd>(Eigen::MatrixXd::Zero(n, n));
  Eigen::VectorXd loo_oracle = oracle::hat_matrix_loo(X, y);
  for (Eigen::Index i : {0, 7, 23}) {
    auto rf = refit_without(spec, d, i);
    const double pred = X.row(i).head(2).dot(rf.theta.head(2));
    CHECK(pred == doctest::Approx(loo_oracle[i]).epsilon(1e-10));
  }
}

TEST_CASE("refit_without works down to n = 2") {
  auto cfg = binary_cfg(2, 61, 0.0);
  auto truth = gen_binary_ar1(cfg);
  CandidateSpec spec = gee_spec(Family::GeeBernoulli, {}, WorkingCorr::Independence);
  CHECK_NOTHROW(refit_without(spec, truth.dataset, 0));
}
