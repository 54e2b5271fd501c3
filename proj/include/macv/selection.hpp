#ifndef MACV_SELECTION_HPP
#define MACV_SELECTION_HPP

#include <Eigen/Dense>
#include <optional>

#include "macv/weights.hpp"

namespace macv {

enum class Method { MaSeal, MaConventional, Equal, CvSelect, QicPan, QicImori };

const char* method_name(Method m);
Method method_from_name(const std::string& name);

struct MethodResult {
  Method method;
  Eigen::VectorXd weights;                // degenerate e_s for selectors
  std::optional<Eigen::Index> chosen;     // selectors only
  double criterion = 0.0;                 // value the method minimized
};

Eigen::VectorXd equal_weights(Eigen::Index S);

// Pick the single candidate minimizing the CV criterion; ties go to the
// smallest index.
MethodResult cv_select(const CvPredictionMatrix& cv, const ClusteredDataset& data,
                       const LossSpec& loss);

// Quasi-likelihood under the independence model criterion:
//   QIC = -2 Q(beta_hat; independence) + 2 trace(Omega_I Vr)
// with Omega_I the independence-model information and Vr the robust sandwich
// covariance of the fitted GEE.
double qic_pan(const FitState& fit, const ClusteredDataset& data);

// Modified QIC. The modified penalty is not transcribed in this build; the
// value falls back to qic_pan and `stubbed` (when given) is set accordingly.
double qic_imori(const FitState& fit, const ClusteredDataset& data, bool* stubbed = nullptr);

MethodResult qic_select(const std::vector<FitState>& fits, const ClusteredDataset& data,
                        bool imori);

}  // namespace macv

#endif
