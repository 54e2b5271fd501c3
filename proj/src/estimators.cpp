#include <cmath>

#include "macv/estimators.hpp"

namespace macv {

Eigen::VectorXd FitState::score_sum() const {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(q());
  for (const auto& u : u_subject) s += u;
  return s;
}

LossKind default_loss_kind(Family family) {
  switch (family) {
    case Family::GeeBernoulli: return LossKind::BernoulliQL;
    case Family::GeePoisson: return LossKind::PoissonQL;
    case Family::Sar: return LossKind::Squared;
    case Family::QuantileReg: return LossKind::Check;
  }
  return LossKind::Squared;
}

FitState fit_candidate(const CandidateSpec& spec, const ClusteredDataset& data) {
  switch (spec.family) {
    case Family::GeeBernoulli:
    case Family::GeePoisson: return gee_fit(spec, data);
    case Family::Sar: return sar_fit(spec, data);
    case Family::QuantileReg: return qr_fit(spec, data);
  }
  fail(ErrorCode::ConfigError, "unknown candidate family");
}

Eigen::VectorXd predict_subject_at(const FitState& fit, const ClusteredDataset& data,
                                   Eigen::Index i, const Eigen::VectorXd& theta) {
  const auto& s = data.subjects[static_cast<std::size_t>(i)];
  switch (fit.spec.family) {
    case Family::GeeBernoulli:
    case Family::GeePoisson: return gee_predict_at(fit, s.x, theta);
    case Family::Sar: {
      Eigen::VectorXd out(1);
      out[0] = sar_predict_one(fit, data, i, theta);
      return out;
    }
    case Family::QuantileReg: return qr_predict_at(fit, s.x, theta);
  }
  fail(ErrorCode::ConfigError, "unknown candidate family");
}

Eigen::VectorXd predict_subject(const FitState& fit, const ClusteredDataset& data, Eigen::Index i) {
  return predict_subject_at(fit, data, i, fit.theta);
}

FitState refit_without(const CandidateSpec& spec, const ClusteredDataset& data, Eigen::Index i) {
  if (data.n() < 2) fail(ErrorCode::ConfigError, "refit_without needs n >= 2");
  ClusteredDataset reduced = drop_subject(data, i);
  if (spec.family != Family::Sar) return fit_candidate(spec, reduced);

  // SAR: delete row and column i of the weight matrix; instruments are
  // rebuilt inside sar_fit from the reduced system.
  const auto& A = *spec.spatial_weights;
  const Eigen::Index n = data.n();
  auto Ar = std::make_shared<Eigen::MatrixXd>(n - 1, n - 1);
  for (Eigen::Index r = 0, rr = 0; r < n; ++r) {
    if (r == i) continue;
    for (Eigen::Index c = 0, cc = 0; c < n; ++c) {
      if (c == i) continue;
      (*Ar)(rr, cc) = A(r, c);
      ++cc;
    }
    ++rr;
  }
  CandidateSpec reduced_spec = spec;
  reduced_spec.spatial_weights = Ar;
  return sar_fit(reduced_spec, reduced);
}

}  // namespace macv
