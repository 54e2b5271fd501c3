#ifndef MACV_SEAL_HPP
#define MACV_SEAL_HPP

#include <Eigen/Dense>
#include <vector>

#include "macv/estimators.hpp"

namespace macv {

enum class SealInverseMode { ExactSolve, SecondOrderApprox };

struct SealConfig {
  int max_newton_iters = 20;
  double tol = 1e-10;  // on the sup norm of psi
  SealInverseMode inverse_mode = SealInverseMode::SecondOrderApprox;
};

// Solves the linear-quadratic surrogate
//   psi_i(theta) = -u_i + J_[-i] (theta_hat - theta) - H_[-i] (theta_hat - theta)^{x2} / 2 = 0
// by Newton-Raphson from theta_hat. Leave-one-out J and H come from subtracting
// subject i's cached contributions, never from re-summing; the full-data J is
// factored once per fit and reused by the second-order inverse approximation.
class SealSolver {
 public:
  SealSolver(const FitState& fit, SealConfig cfg);

  struct Result {
    Eigen::VectorXd theta;
    int iterations = 0;
    bool hit_max_iters = false;
    double psi_norm = 0.0;
  };

  Result loo(Eigen::Index i) const;

 private:
  const FitState& fit_;
  SealConfig cfg_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_full_;
};

Eigen::VectorXd seal_loo(const FitState& fit, Eigen::Index i, const SealConfig& cfg = {});

enum class CvMode { Seal, Conventional };
enum class CvCellMode { Seal, Conventional, SealFallback };

// All leave-subject-out and in-sample predictions for the S candidates.
struct CvPredictionMatrix {
  std::vector<std::vector<Eigen::VectorXd>> loo;       // [s][i], length n_i
  std::vector<std::vector<Eigen::VectorXd>> insample;  // [s][i], length n_i
  std::vector<std::vector<CvCellMode>> cell_mode;      // [s][i]

  Eigen::Index n_candidates() const { return static_cast<Eigen::Index>(loo.size()); }
  Eigen::Index n_subjects() const {
    return loo.empty() ? 0 : static_cast<Eigen::Index>(loo.front().size());
  }
};

// QR candidates always take the conventional route (the check loss lacks the
// smoothness the surrogate expansion needs); a SEAL failure in a single cell
// falls back to a conventional refit for that cell only.
CvPredictionMatrix build_cv_matrix(const std::vector<FitState>& fits, const ClusteredDataset& data,
                                   const SealConfig& cfg, CvMode mode);

struct SealErrorRow {
  Eigen::Index candidate;
  Eigen::Index subject;
  double seal_vs_refit;  // || theta_tilde - theta_hat_[-i] ||
  double refit_move;     // || theta_hat_[-i] - theta_hat ||
};

struct SealErrorProfile {
  std::vector<SealErrorRow> rows;
  double max_discrepancy = 0.0;
  double median_discrepancy = 0.0;
};

// Discrepancy of the surrogate against full refits on a subject subset.
SealErrorProfile seal_error_profile(const std::vector<FitState>& fits,
                                    const ClusteredDataset& data, const SealConfig& cfg,
                                    const std::vector<Eigen::Index>& sample);

}  // namespace macv

#endif
