#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

#include "macv/estimators.hpp"

namespace macv {
namespace {

Eigen::MatrixXd selected_columns(const CandidateSpec& spec, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd xs(X.rows(), static_cast<Eigen::Index>(spec.covariate_subset.size()));
  for (Eigen::Index c = 0; c < xs.cols(); ++c)
    xs.col(c) = X.col(spec.covariate_subset[static_cast<std::size_t>(c)]);
  return xs;
}

void gather_units(const CandidateSpec& spec, const ClusteredDataset& data, Eigen::VectorXd& Y,
                  Eigen::MatrixXd& Xs) {
  const Eigen::Index n = data.n();
  Eigen::MatrixXd X(n, data.p);
  Y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = data.subjects[static_cast<std::size_t>(i)];
    if (s.size() != 1) fail(ErrorCode::ConfigError, "sar_fit requires n_i = 1 for every subject");
    Y[i] = s.y[0];
    X.row(i) = s.x.row(0);
  }
  Xs = selected_columns(spec, X);
}

// Admissible rho interval (1/lambda_min, 1/lambda_max) from the real part of
// the spectrum of A, shrunk slightly to keep I - rho A invertible.
std::pair<double, double> rho_interval(const Eigen::MatrixXd& A) {
  const double big = 1e6;
  if (A.cwiseAbs().maxCoeff() == 0.0) return {-big, big};
  Eigen::EigenSolver<Eigen::MatrixXd> es(A, false);
  double lam_pos = 0.0, lam_neg = 0.0;
  for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) {
    const double re = es.eigenvalues()[k].real();
    lam_pos = std::max(lam_pos, re);
    lam_neg = std::min(lam_neg, re);
  }
  double hi = lam_pos > 1e-12 ? 1.0 / lam_pos : big;
  double lo = lam_neg < -1e-12 ? 1.0 / lam_neg : -big;
  const double shrink = 1e-6;
  return {lo + shrink * std::max(1.0, std::abs(lo)), hi - shrink * std::max(1.0, std::abs(hi))};
}

}  // namespace

FitState sar_fit(const CandidateSpec& spec, const ClusteredDataset& data) {
  if (spec.family != Family::Sar) fail(ErrorCode::ConfigError, "sar_fit: not a SAR candidate");
  spec.validate(data.p);
  const auto& A = *spec.spatial_weights;
  const Eigen::Index n = data.n();
  if (A.rows() != n) fail(ErrorCode::ShapeMismatch, "spatial_weights size does not match n");

  Eigen::VectorXd Y;
  Eigen::MatrixXd Xs;
  gather_units(spec, data, Y, Xs);
  const Eigen::Index k = Xs.cols();
  const Eigen::Index q = k + 1;

  Eigen::VectorXd AY = A * Y;
  Eigen::MatrixXd G(n, q);
  G.leftCols(k) = Xs;
  G.col(k) = AY;

  Eigen::MatrixXd AX = A * Xs;
  Eigen::MatrixXd Z(n, 3 * k);
  Z.leftCols(k) = Xs;
  Z.middleCols(k, k) = AX;
  Z.rightCols(k) = A * AX;

  // Orthonormal basis of the instrument span; rank must cover the X block.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> zqr(Z);
  zqr.setThreshold(1e-10);
  const Eigen::Index zr = zqr.rank();
  if (zr < k)
    fail(ErrorCode::RankDeficientInstruments, "instrument matrix does not span the regressors");
  Eigen::MatrixXd Qz = zqr.householderQ() * Eigen::MatrixXd::Identity(n, zr);
  Eigen::MatrixXd Ghat = Qz * (Qz.transpose() * G);

  FitState fit;
  fit.spec = spec;
  fit.theta = Eigen::VectorXd::Zero(q);

  // Normal equations Ghat' G theta = Ghat' Y; rank-deficiency in the AY column
  // (e.g. A = 0) pins rho at zero and solves the pure regression.
  Eigen::MatrixXd M = Ghat.transpose() * G;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> mqr(Ghat);
  mqr.setThreshold(1e-9);
  bool pin_rho = mqr.rank() < q;
  if (pin_rho) {
    Eigen::MatrixXd Xhat = Qz * (Qz.transpose() * Xs);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> xqr(Xhat);
    xqr.setThreshold(1e-9);
    if (xqr.rank() < k)
      fail(ErrorCode::RankDeficientInstruments, "projected regressors are rank deficient");
    Eigen::VectorXd beta = (Xhat.transpose() * Xs).ldlt().solve(Xhat.transpose() * Y);
    fit.theta.head(k) = beta;
    fit.theta[k] = 0.0;
    fit.rho_pinned = true;
  } else {
    fit.theta = M.ldlt().solve(Ghat.transpose() * Y);
  }

  // cheap screen first: |rho| * ||A|| < 1 already implies stability, the
  // spectrum is only needed when the estimate strays outside that ball
  const double a_norm = std::min(A.cwiseAbs().rowwise().sum().maxCoeff(),
                                 A.cwiseAbs().colwise().sum().maxCoeff());
  if (!fit.rho_pinned && std::abs(fit.theta[k]) * a_norm >= 1.0 - 1e-6) {
    auto [rho_lo, rho_hi] = rho_interval(A);
    if (fit.theta[k] < rho_lo || fit.theta[k] > rho_hi) {
      const double rho_c = std::clamp(fit.theta[k], rho_lo, rho_hi);
      // refit beta with rho held at the boundary
      Eigen::MatrixXd Xhat = Ghat.leftCols(k);
      Eigen::VectorXd resp = Y - rho_c * AY;
      fit.theta.head(k) = (Xhat.transpose() * Xs).ldlt().solve(Xhat.transpose() * resp);
      fit.theta[k] = rho_c;
      fit.warnings.push_back("UnstableRho: clamped to stability interval");
    }
  }

  Eigen::VectorXd resid = Y - G * fit.theta;
  fit.sigma2 = resid.squaredNorm() / std::max<double>(static_cast<double>(n - q), 1.0);
  fit.converged = true;

  // Additive estimating equation u_i = ghat_i (y_i - g_i' theta), linear in
  // theta with the projected weights frozen; H = 0 so SEAL is exact here.
  fit.u_subject.resize(static_cast<std::size_t>(n));
  fit.jac_subject.resize(static_cast<std::size_t>(n));
  fit.hess_subject.resize(static_cast<std::size_t>(n));
  fit.jacobian = Eigen::MatrixXd::Zero(q, q);
  fit.hessian_tensor.assign(static_cast<std::size_t>(q), Eigen::MatrixXd::Zero(q, q));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd w = Ghat.row(i).transpose();
    Eigen::VectorXd g = G.row(i).transpose();
    if (fit.rho_pinned) {
      w[k] = 0.0;
      g[k] = 0.0;
    }
    const double ri = Y[i] - g.dot(fit.theta);
    Eigen::VectorXd ui = w * ri;
    Eigen::MatrixXd Ji = w * g.transpose();
    if (fit.rho_pinned) {
      // keep the pinned coordinate regular: each unit carries 1/n of a unit
      // diagonal so leave-one-out Jacobians stay invertible
      ui[k] = 0.0;
      Ji(k, k) = 1.0 / static_cast<double>(n);
    }
    fit.u_subject[static_cast<std::size_t>(i)] = ui;
    fit.jac_subject[static_cast<std::size_t>(i)] = Ji;
    fit.hess_subject[static_cast<std::size_t>(i)].assign(static_cast<std::size_t>(q),
                                                         Eigen::MatrixXd::Zero(q, q));
    fit.jacobian += Ji;
  }
  return fit;
}

double sar_predict_one(const FitState& fit, const ClusteredDataset& data, Eigen::Index i,
                       const Eigen::VectorXd& theta) {
  const auto& A = *fit.spec.spatial_weights;
  const Eigen::Index k = theta.size() - 1;
  const auto& s = data.subjects[static_cast<std::size_t>(i)];
  double eta = 0.0;
  for (Eigen::Index c = 0; c < k; ++c)
    eta += s.x(0, fit.spec.covariate_subset[static_cast<std::size_t>(c)]) * theta[c];
  double neigh = 0.0;
  for (Eigen::Index j = 0; j < data.n(); ++j) {
    if (A(i, j) != 0.0) neigh += A(i, j) * data.subjects[static_cast<std::size_t>(j)].y[0];
  }
  return eta + theta[k] * neigh;
}

Eigen::VectorXd sar_predict(const FitState& fit, const ClusteredDataset& data) {
  if (fit.spec.family != Family::Sar) fail(ErrorCode::ConfigError, "sar_predict: not a SAR fit");
  Eigen::VectorXd out(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i) out[i] = sar_predict_one(fit, data, i, fit.theta);
  return out;
}

ClusteredDataset drop_subject(const ClusteredDataset& data, Eigen::Index i) {
  if (i < 0 || i >= data.n()) fail(ErrorCode::ConfigError, "drop_subject: index out of range");
  ClusteredDataset out;
  out.p = data.p;
  out.subjects.reserve(data.subjects.size() - 1);
  for (Eigen::Index j = 0; j < data.n(); ++j) {
    if (j != i) out.subjects.push_back(data.subjects[static_cast<std::size_t>(j)]);
  }
  return out;
}

}  // namespace macv
