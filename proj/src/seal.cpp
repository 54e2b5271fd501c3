#include "macv/seal.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>

namespace macv {

namespace {

// H v^{x2}: component l is sum_k v_k (B_k v)_l.
Eigen::VectorXd tensor_apply2(const std::vector<Eigen::MatrixXd>& B, const Eigen::VectorXd& v) {
  const Eigen::Index q = v.size();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(q);
  for (Eigen::Index k = 0; k < q; ++k) out += v[k] * (B[static_cast<std::size_t>(k)] * v);
  return out;
}

// H (I x v): column k is B_k v.
Eigen::MatrixXd tensor_contract(const std::vector<Eigen::MatrixXd>& B, const Eigen::VectorXd& v) {
  const Eigen::Index q = v.size();
  Eigen::MatrixXd out(q, q);
  for (Eigen::Index k = 0; k < q; ++k) out.col(k) = B[static_cast<std::size_t>(k)] * v;
  return out;
}

}  // namespace

SealSolver::SealSolver(const FitState& fit, SealConfig cfg) : fit_(fit), cfg_(cfg) {
  if (!fit.has_hessian() || fit.jac_subject.empty())
    fail(ErrorCode::ConfigError, "SEAL needs cached Jacobian and Hessian contributions");
  if (cfg_.max_newton_iters < 1 || !(cfg_.tol > 0.0))
    fail(ErrorCode::ConfigError, "invalid SealConfig");
  lu_full_.compute(fit.jacobian);
  const double scale = fit.jacobian.cwiseAbs().maxCoeff();
  const double pivot_min = lu_full_.matrixLU().diagonal().cwiseAbs().minCoeff();
  if (!(scale > 0.0) || pivot_min < 1e-13 * scale)
    fail(ErrorCode::SingularJacobian, "full-data Jacobian is numerically singular");
}

SealSolver::Result SealSolver::loo(Eigen::Index i) const {
  const Eigen::Index q = fit_.q();
  const std::size_t ii = static_cast<std::size_t>(i);
  const Eigen::VectorXd& ui = fit_.u_subject[ii];
  const Eigen::MatrixXd Jm = fit_.jacobian - fit_.jac_subject[ii];
  std::vector<Eigen::MatrixXd> Hm(static_cast<std::size_t>(q));
  for (Eigen::Index k = 0; k < q; ++k)
    Hm[static_cast<std::size_t>(k)] =
        fit_.hessian_tensor[static_cast<std::size_t>(k)] - fit_.hess_subject[ii][static_cast<std::size_t>(k)];

  auto psi_at = [&](const Eigen::VectorXd& theta) {
    Eigen::VectorXd v = fit_.theta - theta;
    return Eigen::VectorXd(-ui + Jm * v - 0.5 * tensor_apply2(Hm, v));
  };

  Result res;
  res.theta = fit_.theta;
  Eigen::VectorXd psi = psi_at(res.theta);
  double norm = psi.cwiseAbs().maxCoeff();
  int stall = 0;
  for (int d = 0; d < cfg_.max_newton_iters; ++d) {
    if (norm < cfg_.tol) {
      res.psi_norm = norm;
      return res;
    }
    Eigen::VectorXd v = fit_.theta - res.theta;
    Eigen::MatrixXd Jt = Jm - tensor_contract(Hm, v);
    Eigen::VectorXd step;
    if (cfg_.inverse_mode == SealInverseMode::ExactSolve) {
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(Jt);
      if (lu.matrixLU().diagonal().cwiseAbs().minCoeff() <
          1e-13 * std::max(1.0, Jt.cwiseAbs().maxCoeff()))
        fail(ErrorCode::SingularJacobian, "SEAL iteration Jacobian singular");
      step = lu.solve(psi);
    } else {
      // Jt^{-1} ~ J^{-1} + J^{-1} (J - Jt) J^{-1}, J factored once at theta_hat
      Eigen::VectorXd base = lu_full_.solve(psi);
      step = base + lu_full_.solve((fit_.jacobian - Jt) * base);
    }
    res.theta += step;
    ++res.iterations;
    psi = psi_at(res.theta);
    const double new_norm = psi.cwiseAbs().maxCoeff();
    if (new_norm >= norm && new_norm >= cfg_.tol) {
      if (++stall >= 3) fail(ErrorCode::NoProgress, "SEAL residual not decreasing");
    } else {
      stall = 0;
    }
    norm = new_norm;
  }
  res.psi_norm = norm;
  res.hit_max_iters = norm >= cfg_.tol;
  return res;
}

Eigen::VectorXd seal_loo(const FitState& fit, Eigen::Index i, const SealConfig& cfg) {
  return SealSolver(fit, cfg).loo(i).theta;
}

CvPredictionMatrix build_cv_matrix(const std::vector<FitState>& fits, const ClusteredDataset& data,
                                   const SealConfig& cfg, CvMode mode) {
  const std::size_t S = fits.size();
  const Eigen::Index n = data.n();
  if (S == 0) fail(ErrorCode::ConfigError, "build_cv_matrix: no candidates");

  CvPredictionMatrix cv;
  cv.loo.assign(S, std::vector<Eigen::VectorXd>(static_cast<std::size_t>(n)));
  cv.insample.assign(S, std::vector<Eigen::VectorXd>(static_cast<std::size_t>(n)));
  cv.cell_mode.assign(S, std::vector<CvCellMode>(static_cast<std::size_t>(n), CvCellMode::Conventional));

  for (std::size_t s = 0; s < S; ++s) {
    const FitState& fit = fits[s];
    const bool use_seal =
        mode == CvMode::Seal && fit.spec.family != Family::QuantileReg && fit.has_hessian();
    std::unique_ptr<SealSolver> solver;
    if (use_seal) solver = std::make_unique<SealSolver>(fit, cfg);

    std::string cell_error;
    std::mutex err_mutex;
    auto record_error = [&](std::size_t i, const std::string& what) {
      std::lock_guard<std::mutex> g(err_mutex);
      if (cell_error.empty())
        cell_error = "cv cell (s=" + std::to_string(s) + ", i=" + std::to_string(i) + "): " + what;
    };
    parallel::parallel_for(static_cast<std::size_t>(n), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        const Eigen::Index ei = static_cast<Eigen::Index>(i);
        cv.insample[s][i] = predict_subject(fit, data, ei);
        bool done = false;
        if (use_seal) {
          try {
            auto res = solver->loo(ei);
            cv.loo[s][i] = predict_subject_at(fit, data, ei, res.theta);
            cv.cell_mode[s][i] = CvCellMode::Seal;
            done = true;
          } catch (const Error&) {
            done = false;  // fall through to a conventional refit for this cell
          }
        }
        if (!done) {
          try {
            FitState rf = refit_without(fit.spec, data, ei);
            cv.loo[s][i] = predict_subject_at(fit, data, ei, rf.theta);
            cv.cell_mode[s][i] = use_seal ? CvCellMode::SealFallback : CvCellMode::Conventional;
          } catch (const Error& e) {
            record_error(i, e.what());
          }
        }
        if (cv.loo[s][i].size() > 0 && !cv.loo[s][i].allFinite())
          record_error(i, "non-finite prediction");
      }
    });
    if (!cell_error.empty()) fail(ErrorCode::NonFiniteValue, cell_error);
  }
  return cv;
}

SealErrorProfile seal_error_profile(const std::vector<FitState>& fits,
                                    const ClusteredDataset& data, const SealConfig& cfg,
                                    const std::vector<Eigen::Index>& sample) {
  if (sample.empty()) fail(ErrorCode::ConfigError, "seal_error_profile: empty sample");
  SealErrorProfile out;
  for (std::size_t s = 0; s < fits.size(); ++s) {
    const FitState& fit = fits[s];
    if (!fit.has_hessian()) continue;  // QR: surrogate not offered
    SealSolver solver(fit, cfg);
    for (Eigen::Index i : sample) {
      auto res = solver.loo(i);
      FitState rf = refit_without(fit.spec, data, i);
      SealErrorRow row;
      row.candidate = static_cast<Eigen::Index>(s);
      row.subject = i;
      row.seal_vs_refit = (res.theta - rf.theta).norm();
      row.refit_move = (rf.theta - fit.theta).norm();
      out.rows.push_back(row);
    }
  }
  std::vector<double> d;
  d.reserve(out.rows.size());
  for (const auto& r : out.rows) {
    d.push_back(r.seal_vs_refit);
    out.max_discrepancy = std::max(out.max_discrepancy, r.seal_vs_refit);
  }
  if (!d.empty()) out.median_discrepancy = quantile_type7(d, 0.5);
  return out;
}

}  // namespace macv
