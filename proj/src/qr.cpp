#include <algorithm>
#include <cmath>

#include "macv/estimators.hpp"

namespace macv {
namespace {

double rho_alpha(double r, double alpha) { return r * (alpha - (r <= 0.0 ? 1.0 : 0.0)); }

double objective(const Eigen::VectorXd& r, double alpha) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i) s += rho_alpha(r[i], alpha);
  return s;
}

// Exact minimizer of t -> sum_i rho_alpha(r_i - t * s_i): a weighted quantile
// over the breakpoints r_i / s_i.
double line_min(const Eigen::VectorXd& r, const Eigen::VectorXd& s, double alpha) {
  struct Bp {
    double t, w, a;
  };
  std::vector<Bp> bps;
  bps.reserve(static_cast<std::size_t>(r.size()));
  double total_wa = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    if (s[i] == 0.0) continue;
    const double w = std::abs(s[i]);
    const double a = s[i] > 0.0 ? alpha : 1.0 - alpha;
    bps.push_back({r[i] / s[i], w, a});
    total_wa += w * a;
  }
  if (bps.empty()) return 0.0;
  std::sort(bps.begin(), bps.end(), [](const Bp& x, const Bp& y) { return x.t < y.t; });
  double cum = 0.0;
  for (const auto& b : bps) {
    cum += b.w;
    if (cum >= total_wa - 1e-14) return b.t;
  }
  return bps.back().t;
}

Eigen::MatrixXd qr_design(const CandidateSpec& spec, const ClusteredDataset& data,
                          Eigen::VectorXd& y) {
  const Eigen::Index n = data.n();
  y.resize(n);
  Eigen::MatrixXd xs(n, static_cast<Eigen::Index>(spec.covariate_subset.size()) + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = data.subjects[static_cast<std::size_t>(i)];
    if (s.size() != 1) fail(ErrorCode::ConfigError, "qr_fit requires n_i = 1 for every subject");
    y[i] = s.y[0];
    xs(i, 0) = 1.0;
    for (std::size_t c = 0; c < spec.covariate_subset.size(); ++c)
      xs(i, static_cast<Eigen::Index>(c) + 1) = s.x(0, spec.covariate_subset[c]);
  }
  return xs;
}

}  // namespace

FitState qr_fit(const CandidateSpec& spec, const ClusteredDataset& data, const QrOptions& opts) {
  if (spec.family != Family::QuantileReg) fail(ErrorCode::ConfigError, "qr_fit: not a QR candidate");
  spec.validate(data.p);
  const double alpha = spec.quantile_level;

  Eigen::VectorXd y;
  Eigen::MatrixXd X = qr_design(spec, data, y);
  const Eigen::Index n = X.rows();
  const Eigen::Index q = X.cols();

  FitState fit;
  fit.spec = spec;

  // start from least squares
  Eigen::VectorXd beta = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  Eigen::VectorXd r = y - X * beta;

  std::vector<double> res(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) res[static_cast<std::size_t>(i)] = r[i];
  const double iqr = quantile_type7(res, 0.75) - quantile_type7(res, 0.25);
  const double h = std::max(1e-4 * iqr, 1e-10);

  // IRLS on the smoothed loss: rho_a(r) = |r|/2 + (a - 1/2) r with |r|
  // majorized by r^2 / (2 max(|r|, h)).
  for (int it = 0; it < opts.max_irls; ++it) {
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) w[i] = 0.5 / std::max(std::abs(r[i]), h);
    Eigen::MatrixXd XtWX = X.transpose() * w.asDiagonal() * X;
    Eigen::VectorXd rhs = X.transpose() * (w.asDiagonal() * y) +
                          (alpha - 0.5) * X.colwise().sum().transpose();
    Eigen::VectorXd beta_new = XtWX.ldlt().solve(rhs);
    const double step = (beta_new - beta).cwiseAbs().maxCoeff();
    beta = beta_new;
    r = y - X * beta;
    if (step < 1e-9 * std::max(1.0, beta.cwiseAbs().maxCoeff())) break;
  }

  // Polish on the exact loss: coordinate descent plus occasional steepest
  // subgradient directions, each step an exact piecewise-linear line search.
  double obj = objective(r, alpha);
  for (int sweep = 0; sweep < opts.max_cd_sweeps; ++sweep) {
    double moved = 0.0;
    for (Eigen::Index m = 0; m < q; ++m) {
      const double t = line_min(r, X.col(m), alpha);
      if (t != 0.0) {
        beta[m] += t;
        r -= t * X.col(m);
        moved = std::max(moved, std::abs(t));
      }
    }
    // subgradient direction, in case coordinates alone stall
    Eigen::VectorXd g = Eigen::VectorXd::Zero(q);
    for (Eigen::Index i = 0; i < n; ++i)
      if (r[i] != 0.0) g += X.row(i).transpose() * (alpha - (r[i] < 0.0 ? 1.0 : 0.0));
    if (g.norm() > 1e-12) {
      Eigen::VectorXd d = g / g.norm();
      Eigen::VectorXd s = X * d;
      const double t = line_min(r, s, alpha);
      const double new_obj = objective(r - t * s, alpha);
      if (new_obj < obj - 1e-15) {
        beta += t * d;
        r -= t * s;
        moved = std::max(moved, std::abs(t));
      }
    }
    const double new_obj = objective(r, alpha);
    if (new_obj > obj + 1e-12) fit.warnings.push_back("NonConvergence: polish increased objective");
    obj = new_obj;
    if (moved < opts.tol * std::max(1.0, beta.cwiseAbs().maxCoeff())) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged) fit.warnings.push_back("NonConvergence: coordinate descent cap reached");

  fit.theta = beta;

  // Score contributions u_i = x_i (alpha - 1{r_i <= 0}); at zero residuals the
  // subgradient is chosen inside [alpha-1, alpha] so that the total vanishes.
  const double ztol = 1e-8 * std::max(1.0, y.cwiseAbs().maxCoeff());
  std::vector<Eigen::Index> zero_idx;
  Eigen::VectorXd c = Eigen::VectorXd::Zero(q);
  fit.u_subject.assign(static_cast<std::size_t>(n), Eigen::VectorXd::Zero(q));
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(r[i]) <= ztol) {
      zero_idx.push_back(i);
    } else {
      Eigen::VectorXd ui = X.row(i).transpose() * (alpha - (r[i] < 0.0 ? 1.0 : 0.0));
      fit.u_subject[static_cast<std::size_t>(i)] = ui;
      c += ui;
    }
  }
  if (!zero_idx.empty()) {
    const Eigen::Index z = static_cast<Eigen::Index>(zero_idx.size());
    Eigen::MatrixXd Xz(z, q);
    for (Eigen::Index j = 0; j < z; ++j) Xz.row(j) = X.row(zero_idx[static_cast<std::size_t>(j)]);
    // box-constrained least squares for xi: min ||Xz' xi + c||^2, xi in [a-1, a]
    Eigen::VectorXd xi = Eigen::VectorXd::Constant(z, alpha - 0.5);
    const double lip = std::max((Xz * Xz.transpose()).trace(), 1e-12);
    for (int it = 0; it < 500; ++it) {
      Eigen::VectorXd grad = Xz * (Xz.transpose() * xi + c);
      Eigen::VectorXd xi_new =
          (xi - grad / lip).cwiseMax(alpha - 1.0).cwiseMin(alpha);
      if ((xi_new - xi).cwiseAbs().maxCoeff() < 1e-14) {
        xi = xi_new;
        break;
      }
      xi = xi_new;
    }
    for (Eigen::Index j = 0; j < z; ++j) {
      fit.u_subject[static_cast<std::size_t>(zero_idx[static_cast<std::size_t>(j)])] =
          Xz.row(j).transpose() * xi[j];
    }
  }

  // The check loss is not three-times differentiable: no Jacobian or Hessian
  // tensor, SEAL is never offered for QR candidates.
  fit.jac_subject.clear();
  fit.hess_subject.clear();
  fit.jacobian.resize(0, 0);
  fit.hessian_tensor.clear();
  return fit;
}

Eigen::VectorXd qr_predict_at(const FitState& fit, const Eigen::MatrixXd& x_new,
                              const Eigen::VectorXd& theta) {
  Eigen::VectorXd out(x_new.rows());
  for (Eigen::Index j = 0; j < x_new.rows(); ++j) {
    double eta = theta[0];
    for (std::size_t c = 0; c < fit.spec.covariate_subset.size(); ++c)
      eta += x_new(j, fit.spec.covariate_subset[c]) * theta[static_cast<Eigen::Index>(c) + 1];
    out[j] = eta;
  }
  return out;
}

Eigen::VectorXd qr_predict(const FitState& fit, const Eigen::MatrixXd& x_new) {
  return qr_predict_at(fit, x_new, fit.theta);
}

}  // namespace macv
