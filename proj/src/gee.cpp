#include <algorithm>
#include <cmath>

#include "macv/estimators.hpp"

namespace macv {
namespace {

// Canonical-link scalar pieces of the estimating function. With
// P(eta) = m'(eta)/sqrt(v(mu)) and Q(eta) = (y - mu)/sqrt(v(mu)),
// the subject score is u_i = X' diag(P) Rinv Q and its theta-derivatives
// reduce to contractions of P, Q and their eta-derivatives.
struct ScalarPieces {
  double P, dP, d2P, Q, dQ, d2Q;
};

ScalarPieces bernoulli_pieces(double y, double eta) {
  const double mu = 1.0 / (1.0 + std::exp(-eta));
  const double a = mu * (1.0 - mu);
  const double sa = std::sqrt(std::max(a, 1e-300));  // keeps 0/0 out of separated fits
  const double c = 1.0 - 2.0 * mu;
  ScalarPieces s;
  s.P = sa;
  s.dP = 0.5 * c * sa;
  s.d2P = sa * (-a + 0.25 * c * c);
  s.Q = (y - mu) / sa;
  s.dQ = -sa - 0.5 * c * s.Q;
  s.d2Q = s.Q * (a + 0.25 * c * c);
  return s;
}

ScalarPieces poisson_pieces(double y, double eta) {
  const double mu = std::exp(eta);
  const double sm = std::sqrt(std::max(mu, 1e-300));
  ScalarPieces s;
  s.P = sm;
  s.dP = 0.5 * sm;
  s.d2P = 0.25 * sm;
  s.Q = (y - mu) / sm;
  s.dQ = -0.5 * (y / sm + sm);
  s.d2Q = 0.25 * s.Q;
  return s;
}

Eigen::MatrixXd design_with_intercept(const CandidateSpec& spec, const Eigen::MatrixXd& x) {
  const Eigen::Index ni = x.rows();
  const Eigen::Index k = static_cast<Eigen::Index>(spec.covariate_subset.size());
  Eigen::MatrixXd xs(ni, k + 1);
  xs.col(0).setOnes();
  for (Eigen::Index c = 0; c < k; ++c)
    xs.col(c + 1) = x.col(spec.covariate_subset[static_cast<std::size_t>(c)]);
  return xs;
}

Eigen::MatrixXd working_corr_inverse(WorkingCorr wc, double alpha, Eigen::Index ni) {
  if (ni == 1 || wc == WorkingCorr::Independence)
    return Eigen::MatrixXd::Identity(ni, ni);
  Eigen::MatrixXd R(ni, ni);
  if (wc == WorkingCorr::Exchangeable) {
    R.setConstant(alpha);
    R.diagonal().setOnes();
  } else {
    for (Eigen::Index j = 0; j < ni; ++j)
      for (Eigen::Index l = 0; l < ni; ++l)
        R(j, l) = std::pow(alpha, static_cast<double>(std::abs(j - l)));
  }
  return R.inverse();
}

struct SubjectWork {
  Eigen::MatrixXd xs;      // ni x q design with intercept
  Eigen::VectorXd eta;
  std::vector<ScalarPieces> sp;
};

void eval_pieces(Family fam, const Eigen::VectorXd& y, SubjectWork& w) {
  const Eigen::Index ni = y.size();
  w.sp.resize(static_cast<std::size_t>(ni));
  for (Eigen::Index j = 0; j < ni; ++j) {
    w.sp[static_cast<std::size_t>(j)] = fam == Family::GeeBernoulli
                                            ? bernoulli_pieces(y[j], w.eta[j])
                                            : poisson_pieces(y[j], w.eta[j]);
  }
}

// u_i(theta) = X' diag(P) Rinv Q  (dispersion dropped; it rescales U, J, H by
// the same factor and cancels everywhere SEAL and the fit use them).
Eigen::VectorXd subject_score(const SubjectWork& w, const Eigen::MatrixXd& Rinv) {
  const Eigen::Index ni = w.eta.size();
  Eigen::VectorXd Qv(ni), Pv(ni);
  for (Eigen::Index j = 0; j < ni; ++j) {
    Qv[j] = w.sp[static_cast<std::size_t>(j)].Q;
    Pv[j] = w.sp[static_cast<std::size_t>(j)].P;
  }
  return w.xs.transpose() * (Pv.asDiagonal() * (Rinv * Qv));
}

// J_i = -du_i/dtheta' = -X'[diag(dP .* RinvQ) + diag(P) Rinv diag(dQ)]X
Eigen::MatrixXd subject_jacobian(const SubjectWork& w, const Eigen::MatrixXd& Rinv) {
  const Eigen::Index ni = w.eta.size();
  Eigen::VectorXd Qv(ni), Pv(ni), dPv(ni), dQv(ni);
  for (Eigen::Index j = 0; j < ni; ++j) {
    const auto& s = w.sp[static_cast<std::size_t>(j)];
    Qv[j] = s.Q;
    Pv[j] = s.P;
    dPv[j] = s.dP;
    dQv[j] = s.dQ;
  }
  Eigen::VectorXd RinvQ = Rinv * Qv;
  Eigen::MatrixXd inner = (dPv.cwiseProduct(RinvQ)).asDiagonal();
  inner += Pv.asDiagonal() * Rinv * dQv.asDiagonal();
  return -w.xs.transpose() * inner * w.xs;
}

// Slices B_k = dJ_i/dtheta_k of the third-derivative tensor:
// (B_k)_{lm} = -sum_{j,j'} X_{jl} Rinv_{jj'} [ d2P_j X_{jm} X_{jk} Q_{j'}
//   + dP_j dQ_{j'} (X_{jm} X_{j'k} + X_{jk} X_{j'm}) + P_j d2Q_{j'} X_{j'm} X_{j'k} ]
std::vector<Eigen::MatrixXd> subject_hessian(const SubjectWork& w, const Eigen::MatrixXd& Rinv) {
  const Eigen::Index ni = w.eta.size();
  const Eigen::Index q = w.xs.cols();
  std::vector<Eigen::MatrixXd> B(static_cast<std::size_t>(q), Eigen::MatrixXd::Zero(q, q));
  for (Eigen::Index j = 0; j < ni; ++j) {
    const auto& sj = w.sp[static_cast<std::size_t>(j)];
    const auto xj = w.xs.row(j);
    for (Eigen::Index jp = 0; jp < ni; ++jp) {
      const double r = Rinv(j, jp);
      if (r == 0.0) continue;
      const auto& sp2 = w.sp[static_cast<std::size_t>(jp)];
      const auto xp = w.xs.row(jp);
      const double t1 = r * sj.d2P * sp2.Q;
      const double t2 = r * sj.dP * sp2.dQ;
      const double t3 = r * sj.P * sp2.d2Q;
      for (Eigen::Index k = 0; k < q; ++k) {
        auto& Bk = B[static_cast<std::size_t>(k)];
        for (Eigen::Index l = 0; l < q; ++l) {
          const double xjl = xj[l];
          const double xpl = xp[l];
          for (Eigen::Index m = 0; m < q; ++m) {
            Bk(l, m) -= t1 * xjl * xj[m] * xj[k] +
                        t2 * (xjl * xj[m] * xp[k] + xjl * xj[k] * xp[m]) +
                        t3 * xjl * xp[m] * xp[k];
          }
        }
      }
    }
  }
  return B;
}

struct NuisanceEstimate {
  double phi = 1.0;
  double alpha = 0.0;
};

NuisanceEstimate estimate_nuisance(const std::vector<SubjectWork>& work, WorkingCorr wc,
                                   Eigen::Index q) {
  NuisanceEstimate out;
  double ssq = 0.0;
  double nobs = 0.0;
  for (const auto& w : work) {
    for (const auto& s : w.sp) ssq += s.Q * s.Q;
    nobs += static_cast<double>(w.sp.size());
  }
  out.phi = ssq / std::max(nobs - static_cast<double>(q), 1.0);
  if (wc == WorkingCorr::Independence) return out;

  double num = 0.0;
  double cnt = 0.0;
  if (wc == WorkingCorr::Exchangeable) {
    for (const auto& w : work) {
      const auto ni = static_cast<Eigen::Index>(w.sp.size());
      for (Eigen::Index j = 0; j < ni; ++j)
        for (Eigen::Index l = j + 1; l < ni; ++l)
          num += w.sp[static_cast<std::size_t>(j)].Q * w.sp[static_cast<std::size_t>(l)].Q;
      cnt += 0.5 * static_cast<double>(ni * (ni - 1));
    }
  } else {  // Ar1: adjacent pairs
    for (const auto& w : work) {
      const auto ni = static_cast<Eigen::Index>(w.sp.size());
      for (Eigen::Index j = 0; j + 1 < ni; ++j)
        num += w.sp[static_cast<std::size_t>(j)].Q * w.sp[static_cast<std::size_t>(j + 1)].Q;
      cnt += static_cast<double>(ni - 1);
    }
  }
  if (cnt <= 0.0) return out;  // no within-subject pairs: alpha stays 0
  out.alpha = num / (std::max(cnt - static_cast<double>(q), 1.0) * out.phi);

  Eigen::Index ni_max = 0;
  for (const auto& w : work) ni_max = std::max(ni_max, static_cast<Eigen::Index>(w.sp.size()));
  if (wc == WorkingCorr::Exchangeable) {
    const double lo = ni_max > 1 ? -0.99 / static_cast<double>(ni_max - 1) : -0.99;
    out.alpha = std::clamp(out.alpha, lo, 0.99);
  } else {
    out.alpha = std::clamp(out.alpha, -0.99, 0.99);
  }
  return out;
}

}  // namespace

FitState gee_fit(const CandidateSpec& spec, const ClusteredDataset& data, const GeeOptions& opts) {
  if (!spec.is_gee()) fail(ErrorCode::ConfigError, "gee_fit: not a GEE candidate");
  spec.validate(data.p);
  const bool bern = spec.family == Family::GeeBernoulli;
  for (const auto& s : data.subjects) {
    for (Eigen::Index j = 0; j < s.size(); ++j) {
      const double y = s.y[j];
      if (bern && y != 0.0 && y != 1.0)
        fail(ErrorCode::DomainError, "gee_fit: Bernoulli response not in {0,1} (subject " + s.id + ")");
      if (!bern && (y < 0.0 || y != std::floor(y)))
        fail(ErrorCode::DomainError, "gee_fit: Poisson response not a count (subject " + s.id + ")");
    }
  }

  const std::size_t n = data.subjects.size();
  std::vector<SubjectWork> work(n);
  for (std::size_t i = 0; i < n; ++i)
    work[i].xs = design_with_intercept(spec, data.subjects[i].x);
  const Eigen::Index q = work[0].xs.cols();

  FitState fit;
  fit.spec = spec;
  fit.theta = Eigen::VectorXd::Zero(q);
  double alpha = 0.0;
  double phi = 1.0;

  bool converged = false;
  Eigen::Index ni_max = 0;
  for (const auto& s : data.subjects) ni_max = std::max(ni_max, s.size());
  std::vector<Eigen::MatrixXd> rinv_by_ni(static_cast<std::size_t>(ni_max) + 1);

  for (int outer = 0; outer < opts.max_outer; ++outer) {
    for (std::size_t i = 0; i < n; ++i) {
      work[i].eta = work[i].xs * fit.theta;
      eval_pieces(spec.family, data.subjects[i].y, work[i]);
    }
    if (spec.working_correlation != WorkingCorr::Independence && outer > 0) {
      auto nu = estimate_nuisance(work, spec.working_correlation, q);
      alpha = nu.alpha;
      phi = nu.phi;
    }
    for (Eigen::Index ni = 1; ni <= ni_max; ++ni)
      rinv_by_ni[static_cast<std::size_t>(ni)] =
          working_corr_inverse(spec.working_correlation, alpha, ni);

    // Fisher scoring step: F = sum X' diag(P) Rinv diag(P) X, delta = F^{-1} U
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(q, q);
    Eigen::VectorXd U = Eigen::VectorXd::Zero(q);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& w = work[i];
      const Eigen::Index ni = w.eta.size();
      const auto& Rinv = rinv_by_ni[static_cast<std::size_t>(ni)];
      Eigen::VectorXd Pv(ni);
      for (Eigen::Index j = 0; j < ni; ++j) Pv[j] = w.sp[static_cast<std::size_t>(j)].P;
      Eigen::MatrixXd PX = Pv.asDiagonal() * w.xs;
      F.noalias() += PX.transpose() * Rinv * PX;
      U += subject_score(w, Rinv);
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(F);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      fit.warnings.push_back("singular Fisher information");
      break;
    }
    Eigen::VectorXd delta = ldlt.solve(U);
    if (!delta.allFinite()) {
      fit.warnings.push_back("non-finite scoring step");
      break;
    }
    fit.theta += delta;
    if (delta.cwiseAbs().maxCoeff() < opts.tol) {
      converged = true;
      break;
    }
  }

  // Final pass at theta_hat with nuisance frozen.
  double eta_max = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    work[i].eta = work[i].xs * fit.theta;
    eta_max = std::max(eta_max, work[i].eta.cwiseAbs().maxCoeff());
    eval_pieces(spec.family, data.subjects[i].y, work[i]);
  }
  {
    auto nu = estimate_nuisance(work, spec.working_correlation, q);
    phi = nu.phi;
    if (spec.working_correlation != WorkingCorr::Independence) alpha = nu.alpha;
  }
  for (Eigen::Index ni = 1; ni <= ni_max; ++ni)
    rinv_by_ni[static_cast<std::size_t>(ni)] =
        working_corr_inverse(spec.working_correlation, alpha, ni);

  fit.converged = converged;
  if (!converged) fit.warnings.push_back("NonConvergence: max outer iterations reached");
  if (eta_max > opts.separation_eta) fit.warnings.push_back("SeparationSuspected");
  fit.alpha_corr = alpha;
  fit.dispersion = phi;

  fit.u_subject.resize(n);
  fit.jac_subject.resize(n);
  fit.hess_subject.resize(n);
  fit.jacobian = Eigen::MatrixXd::Zero(q, q);
  fit.hessian_tensor.assign(static_cast<std::size_t>(q), Eigen::MatrixXd::Zero(q, q));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& Rinv = rinv_by_ni[static_cast<std::size_t>(work[i].eta.size())];
    fit.u_subject[i] = subject_score(work[i], Rinv);
    fit.jac_subject[i] = subject_jacobian(work[i], Rinv);
    fit.hess_subject[i] = subject_hessian(work[i], Rinv);
    fit.jacobian += fit.jac_subject[i];
    for (Eigen::Index k = 0; k < q; ++k)
      fit.hessian_tensor[static_cast<std::size_t>(k)] += fit.hess_subject[i][static_cast<std::size_t>(k)];
  }
  return fit;
}

Eigen::VectorXd gee_predict_at(const FitState& fit, const Eigen::MatrixXd& x_new,
                               const Eigen::VectorXd& theta) {
  Eigen::MatrixXd xs = design_with_intercept(fit.spec, x_new);
  Eigen::VectorXd eta = xs * theta;
  Eigen::VectorXd out(eta.size());
  if (fit.spec.family == Family::GeeBernoulli) {
    for (Eigen::Index j = 0; j < eta.size(); ++j) out[j] = 1.0 / (1.0 + std::exp(-eta[j]));
  } else {
    for (Eigen::Index j = 0; j < eta.size(); ++j) out[j] = std::exp(eta[j]);
  }
  return out;
}

Eigen::VectorXd gee_predict(const FitState& fit, const Eigen::MatrixXd& x_new) {
  if (!fit.spec.is_gee()) fail(ErrorCode::ConfigError, "gee_predict: not a GEE fit");
  return gee_predict_at(fit, x_new, fit.theta);
}

std::vector<Eigen::VectorXd> gee_score_subjects(const FitState& fit, const ClusteredDataset& data,
                                                const Eigen::VectorXd& theta) {
  std::vector<Eigen::VectorXd> out(data.subjects.size());
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    SubjectWork w;
    w.xs = design_with_intercept(fit.spec, data.subjects[i].x);
    w.eta = w.xs * theta;
    eval_pieces(fit.spec.family, data.subjects[i].y, w);
    auto Rinv = working_corr_inverse(fit.spec.working_correlation, fit.alpha_corr, w.eta.size());
    out[i] = subject_score(w, Rinv);
  }
  return out;
}

Eigen::MatrixXd gee_expected_info(const FitState& fit, const ClusteredDataset& data,
                                  WorkingCorr wc, double alpha) {
  const Eigen::Index q = fit.q();
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(q, q);
  for (const auto& subj : data.subjects) {
    SubjectWork w;
    w.xs = design_with_intercept(fit.spec, subj.x);
    w.eta = w.xs * fit.theta;
    eval_pieces(fit.spec.family, subj.y, w);
    const Eigen::Index ni = w.eta.size();
    Eigen::VectorXd Pv(ni);
    for (Eigen::Index j = 0; j < ni; ++j) Pv[j] = w.sp[static_cast<std::size_t>(j)].P;
    Eigen::MatrixXd PX = Pv.asDiagonal() * w.xs;
    F.noalias() += PX.transpose() * working_corr_inverse(wc, alpha, ni) * PX;
  }
  return F;
}

std::vector<Eigen::MatrixXd> gee_jacobian_subjects(const FitState& fit, const ClusteredDataset& data,
                                                   const Eigen::VectorXd& theta) {
  std::vector<Eigen::MatrixXd> out(data.subjects.size());
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    SubjectWork w;
    w.xs = design_with_intercept(fit.spec, data.subjects[i].x);
    w.eta = w.xs * theta;
    eval_pieces(fit.spec.family, data.subjects[i].y, w);
    auto Rinv = working_corr_inverse(fit.spec.working_correlation, fit.alpha_corr, w.eta.size());
    out[i] = subject_jacobian(w, Rinv);
  }
  return out;
}

}  // namespace macv
