#ifndef MACV_ESTIMATORS_HPP
#define MACV_ESTIMATORS_HPP

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "macv/data.hpp"
#include "macv/losses.hpp"

namespace macv {

// Fitted candidate with everything the SEAL surrogate needs cached at theta_hat:
// per-subject score contributions u_i, per-subject Jacobian contributions J_i
// (J = -dU/dtheta'), and per-subject slices of the third-derivative tensor
// H[k] = dJ/dtheta_k. Nuisance parameters (working correlation, dispersion,
// sigma^2) are frozen at their converged values.
struct FitState {
  CandidateSpec spec;
  Eigen::VectorXd theta;
  bool converged = false;
  std::vector<std::string> warnings;

  std::vector<Eigen::VectorXd> u_subject;               // n entries, each q
  std::vector<Eigen::MatrixXd> jac_subject;             // n entries, each q x q
  std::vector<std::vector<Eigen::MatrixXd>> hess_subject;  // n entries, q slices of q x q; empty for QR
  Eigen::MatrixXd jacobian;                             // sum of jac_subject
  std::vector<Eigen::MatrixXd> hessian_tensor;          // q slices, sums; empty for QR

  // GEE nuisance
  double alpha_corr = 0.0;
  double dispersion = 1.0;
  // SAR nuisance
  double sigma2 = 0.0;
  bool rho_pinned = false;

  Eigen::Index q() const { return theta.size(); }
  Eigen::Index n_subjects() const { return static_cast<Eigen::Index>(u_subject.size()); }
  bool has_hessian() const { return !hessian_tensor.empty(); }
  Eigen::VectorXd score_sum() const;
};

struct GeeOptions {
  double tol = 1e-8;      // on max|delta beta|
  int max_outer = 100;
  double separation_eta = 30.0;
};

FitState gee_fit(const CandidateSpec& spec, const ClusteredDataset& data,
                 const GeeOptions& opts = {});

// Coordinatewise inverse link on the candidate's design row; x_new carries all
// p columns, the subset is selected internally.
Eigen::VectorXd gee_predict(const FitState& fit, const Eigen::MatrixXd& x_new);
Eigen::VectorXd gee_predict_at(const FitState& fit, const Eigen::MatrixXd& x_new,
                               const Eigen::VectorXd& theta);

// Evaluates the per-subject GEE estimating-function contributions u_i(theta)
// with the fit's frozen nuisance; used by finite-difference checks.
std::vector<Eigen::VectorXd> gee_score_subjects(const FitState& fit, const ClusteredDataset& data,
                                                const Eigen::VectorXd& theta);
std::vector<Eigen::MatrixXd> gee_jacobian_subjects(const FitState& fit, const ClusteredDataset& data,
                                                   const Eigen::VectorXd& theta);

// Expected (model-based) information sum_i X' diag(P) Rinv diag(P) X at
// theta_hat under the given working structure; dispersion dropped.
Eigen::MatrixXd gee_expected_info(const FitState& fit, const ClusteredDataset& data,
                                  WorkingCorr wc, double alpha);

// Two-stage least squares for Y = X beta + rho A Y + V with instruments
// [X, AX, A^2 X]; theta = (beta, rho). The projected-instrument weights are
// frozen at the full-data fit so U(theta) = sum_i u_i(theta) is additive.
FitState sar_fit(const CandidateSpec& spec, const ClusteredDataset& data);

Eigen::VectorXd sar_predict(const FitState& fit, const ClusteredDataset& data);
double sar_predict_one(const FitState& fit, const ClusteredDataset& data, Eigen::Index i,
                       const Eigen::VectorXd& theta);

struct QrOptions {
  double tol = 1e-10;
  int max_irls = 200;
  int max_cd_sweeps = 200;
};

FitState qr_fit(const CandidateSpec& spec, const ClusteredDataset& data, const QrOptions& opts = {});

Eigen::VectorXd qr_predict(const FitState& fit, const Eigen::MatrixXd& x_new);
Eigen::VectorXd qr_predict_at(const FitState& fit, const Eigen::MatrixXd& x_new,
                              const Eigen::VectorXd& theta);

FitState fit_candidate(const CandidateSpec& spec, const ClusteredDataset& data);

// Prediction for subject i under `fit`, optionally at a parameter other than
// theta_hat (SEAL plugs in the approximate leave-one-out parameter).
Eigen::VectorXd predict_subject(const FitState& fit, const ClusteredDataset& data, Eigen::Index i);
Eigen::VectorXd predict_subject_at(const FitState& fit, const ClusteredDataset& data,
                                   Eigen::Index i, const Eigen::VectorXd& theta);

// Conventional leave-subject-out refit. For SAR, row and column i of the
// weight matrix are deleted and the instruments rebuilt.
FitState refit_without(const CandidateSpec& spec, const ClusteredDataset& data, Eigen::Index i);

ClusteredDataset drop_subject(const ClusteredDataset& data, Eigen::Index i);

// Loss naturally paired with a family (quasi-likelihoods, squared, check).
LossKind default_loss_kind(Family family);

}  // namespace macv

#endif
