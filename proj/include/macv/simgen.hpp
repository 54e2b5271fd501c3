#ifndef MACV_SIMGEN_HPP
#define MACV_SIMGEN_HPP

#include <Eigen/Dense>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "macv/selection.hpp"

namespace macv {

enum class ResponseKind { Binary, Count };

// Correlated-cluster generator settings: marginal mean from beta (intercept
// first), lag-1 correlation rho, covariates iid standard normal.
struct Design1Config {
  Eigen::Index n = 100;
  Eigen::Index cluster_size = 4;
  Eigen::VectorXd beta;
  double rho = 0.0;
  ResponseKind response = ResponseKind::Binary;
  int M = 1;
  std::uint64_t seed = 0;
  // Count responses only: latent Gaussian lag-1 correlation; NaN = calibrate.
  double latent_rho = std::numeric_limits<double>::quiet_NaN();

  Eigen::Index p() const { return beta.size() - 1; }
};

struct TruthBundle {
  ClusteredDataset dataset;
  std::vector<Eigen::VectorXd> true_means;  // f_{0,i} per subject
};

// Binary AR(1) clusters through the conditional linear family: marginal
// p_ij = expit(x'beta), sequential mean
// lambda_ij = p_ij + rho sqrt(v_ij/v_{i,j-1}) (Y_{i,j-1} - p_{i,j-1}).
// A cluster whose lambda leaves [0,1] is redrawn; the rejection rate is capped.
TruthBundle gen_binary_ar1(const Design1Config& cfg);

// Counts with mu_ij = exp(x'beta) and AR(1) dependence via a Gaussian copula
// whose latent correlation is calibrated so the realized lag-1 Pearson
// correlation matches rho.
TruthBundle gen_count_ar1(const Design1Config& cfg);

// Bisection on the latent correlation against a fixed-seed Monte Carlo
// estimate of the realized lag-1 Pearson correlation.
double calibrate_count_latent_rho(const Design1Config& cfg);

struct SarTruth {
  TruthBundle bundle;
  Eigen::VectorXd y0;      // paired out-of-sample units eta0 + rho0 A0 Y + V0
  Eigen::VectorXd mean_y;  // (I - rho0 A0)^{-1} eta0
};

// Y = rho0 A0 Y + eta0 + V; truth f_{0,i} = eta0_i + rho0 (A0 E Y)_i.
SarTruth gen_sar(const Eigen::MatrixXd& X, const Eigen::VectorXd& eta0, double rho0,
                 const Eigen::MatrixXd& A0, double sigma, std::uint64_t seed);

// Similarity index: normalized average pairwise covariance of candidate losses
// over replications.
double metric_gamma_hat(const Eigen::MatrixXd& losses);
// Grand mean of the M x S candidate-loss matrix.
double metric_lbar(const Eigen::MatrixXd& losses);

// (10/n) * L_n with the known truth plugged into the divergence.
double scaled_loss(const LossSpec& loss, const TruthBundle& truth,
                   const std::vector<Eigen::VectorXd>& predictions);

// Out-of-sample empirical loss against the best single candidate (Bernoulli):
// -(2/n_test) sum_ij [y log(mu/(1-mu)) + log(1-mu)] minus the candidate minimum.
double empirical_loss_case_study(const ClusteredDataset& test,
                                 const std::vector<Eigen::VectorXd>& method_mu,
                                 const std::vector<std::vector<Eigen::VectorXd>>& candidate_mu);

// All subsets of the optional covariates (the last covariate is always left
// out) crossed with the working-correlation list.
std::vector<CandidateSpec> design1_candidates(Eigen::Index p, Family family,
                                              const std::vector<WorkingCorr>& wcs);

struct ExperimentConfig {
  Design1Config design;
  std::vector<Method> methods = {Method::MaSeal, Method::Equal, Method::CvSelect,
                                 Method::QicPan, Method::QicImori};
  std::vector<WorkingCorr> working_correlations = {WorkingCorr::Exchangeable, WorkingCorr::Ar1};
  SealConfig seal;
  OptimizerConfig optimizer;
  bool record_weights = false;
};

struct ResultsTable {
  std::vector<Method> methods;
  Eigen::MatrixXd method_losses;     // M x |methods|, NaN for failed replications
  Eigen::MatrixXd candidate_losses;  // M x S
  std::vector<Eigen::VectorXd> ma_seal_weights;  // per replication when recorded
  double gamma_hat = 0.0;
  double lbar = 0.0;
  std::map<Method, double> method_seconds;
  double fit_seconds = 0.0;
  double cv_seconds = 0.0;
  int n_failed = 0;
  std::vector<std::string> warnings;
};

// Full pipeline per replication: generate, fit every candidate, build the CV
// matrix, run every method, score against the known truth.
ResultsTable run_experiment(const ExperimentConfig& cfg);

struct MethodSummary {
  double mean, q25, q50, q75;
};
MethodSummary summarize_losses(const Eigen::MatrixXd& losses, Eigen::Index col);

}  // namespace macv

#endif
