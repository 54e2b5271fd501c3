#ifndef MACV_LOSSES_HPP
#define MACV_LOSSES_HPP

#include <Eigen/Dense>

#include "macv/common.hpp"

namespace macv {

// Divergence kernels Q(y, f); -2*Q is the loss. All kernels are stored up to
// additive constants in y only, so only differences over the same data are
// meaningful.
enum class LossKind { BernoulliQL, PoissonQL, Squared, Check };

struct LossSpec {
  LossKind kind = LossKind::Squared;
  double alpha = 0.5;  // Check only

  static LossSpec bernoulli() { return {LossKind::BernoulliQL, 0.5}; }
  static LossSpec poisson() { return {LossKind::PoissonQL, 0.5}; }
  static LossSpec squared() { return {LossKind::Squared, 0.5}; }
  static LossSpec check(double alpha);
};

// Predictions are clipped to [kBernoulliClip, 1-kBernoulliClip] before the log
// terms; guards float underflow only, blends of logistic predictions are interior.
inline constexpr double kBernoulliClip = 1e-6;

// Q(y,f) = y*log(f/(1-f)) + log(1-f)
double q_bernoulli(double y, double f);
// Q(y,f) = y*log(f) - f
double q_poisson(double y, double f);
// Q(r,u) = -(r-u)^2/2
double q_squared(double r, double u);
// Q(r,u) = -(r-u)*(alpha - 1{r-u <= 0})/2
double q_check(double r, double u, double alpha);

double q_kernel(const LossSpec& loss, double y, double f);
// dQ/df, defined a.e. (one-sided at the check-loss kink).
double q_kernel_df(const LossSpec& loss, double y, double f);

// Working-independent subject divergence: sum of per-coordinate kernels.
double subject_q(const LossSpec& loss, const Eigen::VectorXd& y, const Eigen::VectorXd& f);

}  // namespace macv

#endif
