#ifndef MACV_WEIGHTS_HPP
#define MACV_WEIGHTS_HPP

#include <Eigen/Dense>

#include "macv/losses.hpp"
#include "macv/seal.hpp"

namespace macv {

enum class OptimMethod { ProjectedGradient, FrankWolfe };

struct OptimizerConfig {
  double tol = 1e-9;  // relative criterion decrease
  int max_iters = 5000;
  OptimMethod method = OptimMethod::ProjectedGradient;
};

// Euclidean projection onto the probability simplex (sort-and-threshold).
Eigen::VectorXd simplex_project(const Eigen::VectorXd& v);

// C_n(w) = -2 sum_i Q{Y_i, sum_s w_s fhat_{(s),i}^{[-i]}}
double criterion_cn(const Eigen::VectorXd& w, const CvPredictionMatrix& cv,
                    const ClusteredDataset& data, const LossSpec& loss);

// Subgradient of C_n at w (gradient where the loss is smooth).
Eigen::VectorXd criterion_gradient(const Eigen::VectorXd& w, const CvPredictionMatrix& cv,
                                   const ClusteredDataset& data, const LossSpec& loss);

struct WeightResult {
  Eigen::VectorXd weights;
  double criterion = 0.0;
  int iterations = 0;
  bool max_iters_reached = false;
};

// Projected (sub)gradient from uniform weights with Armijo backtracking; for
// the piecewise-linear check loss a c/sqrt(iter) schedule takes over once the
// line search stalls. Always returns a feasible vector whose criterion is no
// worse than every vertex and the uniform start; vertices within 1e-12 of one
// another tie-break to uniform weights.
WeightResult minimize_weights(const CvPredictionMatrix& cv, const ClusteredDataset& data,
                              const LossSpec& loss, const OptimizerConfig& cfg = {});

}  // namespace macv

#endif
