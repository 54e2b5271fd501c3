#include "macv/selection.hpp"

#include <cmath>
#include <limits>

namespace macv {

const char* method_name(Method m) {
  switch (m) {
    case Method::MaSeal: return "ma_seal";
    case Method::MaConventional: return "ma_conventional";
    case Method::Equal: return "equal";
    case Method::CvSelect: return "cv";
    case Method::QicPan: return "qic_pan";
    case Method::QicImori: return "qic_imori";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  for (Method m : {Method::MaSeal, Method::MaConventional, Method::Equal, Method::CvSelect,
                   Method::QicPan, Method::QicImori}) {
    if (name == method_name(m)) return m;
  }
  fail(ErrorCode::ConfigError, "unknown method '" + name + "'");
}

Eigen::VectorXd equal_weights(Eigen::Index S) {
  if (S < 1) fail(ErrorCode::ConfigError, "equal_weights: S must be >= 1");
  return Eigen::VectorXd::Constant(S, 1.0 / static_cast<double>(S));
}

MethodResult cv_select(const CvPredictionMatrix& cv, const ClusteredDataset& data,
                       const LossSpec& loss) {
  const Eigen::Index S = cv.n_candidates();
  MethodResult out;
  out.method = Method::CvSelect;
  double best = std::numeric_limits<double>::infinity();
  Eigen::Index best_s = 0;
  for (Eigen::Index s = 0; s < S; ++s) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(S);
    e[s] = 1.0;
    const double c = criterion_cn(e, cv, data, loss);
    if (c < best) {
      best = c;
      best_s = s;
    }
  }
  out.weights = Eigen::VectorXd::Zero(S);
  out.weights[best_s] = 1.0;
  out.chosen = best_s;
  out.criterion = best;
  return out;
}

double qic_pan(const FitState& fit, const ClusteredDataset& data) {
  if (!fit.spec.is_gee()) fail(ErrorCode::ConfigError, "qic_pan: GEE fits only");
  const LossSpec loss{default_loss_kind(fit.spec.family), 0.5};
  double ql = 0.0;
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    const auto& s = data.subjects[i];
    ql += subject_q(loss, s.y, gee_predict(fit, s.x));
  }

  Eigen::MatrixXd omega_i = gee_expected_info(fit, data, WorkingCorr::Independence, 0.0);
  Eigen::MatrixXd bread =
      gee_expected_info(fit, data, fit.spec.working_correlation, fit.alpha_corr);
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(fit.q(), fit.q());
  for (const auto& u : fit.u_subject) meat += u * u.transpose();

  Eigen::LDLT<Eigen::MatrixXd> ldlt(bread);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    fail(ErrorCode::SingularInformation, "qic_pan: singular model-based information");
  Eigen::MatrixXd vr = ldlt.solve(meat);
  vr = ldlt.solve(vr.transpose()).transpose();  // B^{-1} M B^{-1}
  return -2.0 * ql + 2.0 * (omega_i * vr).trace();
}

double qic_imori(const FitState& fit, const ClusteredDataset& data, bool* stubbed) {
  if (stubbed) *stubbed = true;
  return qic_pan(fit, data);
}

MethodResult qic_select(const std::vector<FitState>& fits, const ClusteredDataset& data,
                        bool imori) {
  MethodResult out;
  out.method = imori ? Method::QicImori : Method::QicPan;
  const Eigen::Index S = static_cast<Eigen::Index>(fits.size());
  double best = std::numeric_limits<double>::infinity();
  Eigen::Index best_s = 0;
  for (Eigen::Index s = 0; s < S; ++s) {
    const double v = imori ? qic_imori(fits[static_cast<std::size_t>(s)], data)
                           : qic_pan(fits[static_cast<std::size_t>(s)], data);
    if (v < best) {
      best = v;
      best_s = s;
    }
  }
  out.weights = Eigen::VectorXd::Zero(S);
  out.weights[best_s] = 1.0;
  out.chosen = best_s;
  out.criterion = best;
  return out;
}

}  // namespace macv
