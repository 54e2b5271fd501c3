#include "macv/losses.hpp"

#include <algorithm>
#include <cmath>

namespace macv {

LossSpec LossSpec::check(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::DomainError, "check loss needs alpha in (0,1)");
  return {LossKind::Check, alpha};
}

double q_bernoulli(double y, double f) {
  if (!(y >= 0.0 && y <= 1.0)) fail(ErrorCode::DomainError, "q_bernoulli: y outside [0,1]");
  const double fc = std::clamp(f, kBernoulliClip, 1.0 - kBernoulliClip);
  return y * std::log(fc / (1.0 - fc)) + std::log(1.0 - fc);
}

double q_poisson(double y, double f) {
  if (y < 0.0) fail(ErrorCode::DomainError, "q_poisson: y < 0");
  if (!(f > 0.0)) fail(ErrorCode::DomainError, "q_poisson: f <= 0");
  return (y == 0.0 ? 0.0 : y * std::log(f)) - f;
}

double q_squared(double r, double u) {
  const double d = r - u;
  return -0.5 * d * d;
}

double q_check(double r, double u, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::DomainError, "q_check: alpha outside (0,1)");
  const double d = r - u;
  return -0.5 * d * (alpha - (d <= 0.0 ? 1.0 : 0.0));
}

double q_kernel(const LossSpec& loss, double y, double f) {
  switch (loss.kind) {
    case LossKind::BernoulliQL: return q_bernoulli(y, f);
    case LossKind::PoissonQL: return q_poisson(y, f);
    case LossKind::Squared: return q_squared(y, f);
    case LossKind::Check: return q_check(y, f, loss.alpha);
  }
  fail(ErrorCode::DomainError, "unknown loss kind");
}

double q_kernel_df(const LossSpec& loss, double y, double f) {
  switch (loss.kind) {
    case LossKind::BernoulliQL: {
      const double fc = std::clamp(f, kBernoulliClip, 1.0 - kBernoulliClip);
      return y / fc - (1.0 - y) / (1.0 - fc);
    }
    case LossKind::PoissonQL:
      if (!(f > 0.0)) fail(ErrorCode::DomainError, "q_kernel_df: f <= 0");
      return y / f - 1.0;
    case LossKind::Squared:
      return y - f;
    case LossKind::Check:
      return 0.5 * (loss.alpha - (y - f <= 0.0 ? 1.0 : 0.0));
  }
  fail(ErrorCode::DomainError, "unknown loss kind");
}

double subject_q(const LossSpec& loss, const Eigen::VectorXd& y, const Eigen::VectorXd& f) {
  if (y.size() != f.size()) fail(ErrorCode::LengthMismatch, "subject_q: y and f lengths differ");
  double acc = 0.0;
  for (Eigen::Index j = 0; j < y.size(); ++j) acc += q_kernel(loss, y[j], f[j]);
  return acc;
}

}  // namespace macv
