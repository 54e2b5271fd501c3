#include "macv/weights.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace macv {

Eigen::VectorXd simplex_project(const Eigen::VectorXd& v) {
  const Eigen::Index S = v.size();
  if (S == 0) fail(ErrorCode::DomainError, "simplex_project: empty vector");
  std::vector<double> u(v.data(), v.data() + S);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cum = 0.0;
  double tau = 0.0;
  Eigen::Index rho = 0;
  for (Eigen::Index k = 0; k < S; ++k) {
    cum += u[static_cast<std::size_t>(k)];
    const double t = (cum - 1.0) / static_cast<double>(k + 1);
    if (u[static_cast<std::size_t>(k)] - t > 0.0) {
      rho = k + 1;
      tau = t;
    }
  }
  (void)rho;
  return (v.array() - tau).cwiseMax(0.0).matrix();
}

namespace {

void blend_subject(const CvPredictionMatrix& cv, const Eigen::VectorXd& w, std::size_t i,
                   Eigen::VectorXd& f) {
  f.setZero();
  for (Eigen::Index s = 0; s < w.size(); ++s) {
    if (w[s] != 0.0) f += w[s] * cv.loo[static_cast<std::size_t>(s)][i];
  }
}

}  // namespace

double criterion_cn(const Eigen::VectorXd& w, const CvPredictionMatrix& cv,
                    const ClusteredDataset& data, const LossSpec& loss) {
  const Eigen::Index S = cv.n_candidates();
  if (w.size() != S) fail(ErrorCode::LengthMismatch, "criterion_cn: weight length != S");
  const std::size_t n = data.subjects.size();
  std::vector<double> terms(n);
  parallel::parallel_for(n, [&](std::size_t lo, std::size_t hi) {
    Eigen::VectorXd f;
    for (std::size_t i = lo; i < hi; ++i) {
      f.resize(cv.loo[0][i].size());
      blend_subject(cv, w, i, f);
      terms[i] = -2.0 * subject_q(loss, data.subjects[i].y, f);
    }
  });
  return tree_sum(terms);
}

Eigen::VectorXd criterion_gradient(const Eigen::VectorXd& w, const CvPredictionMatrix& cv,
                                   const ClusteredDataset& data, const LossSpec& loss) {
  const Eigen::Index S = cv.n_candidates();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(S);
  Eigen::VectorXd f;
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    const auto& y = data.subjects[i].y;
    f.resize(y.size());
    blend_subject(cv, w, i, f);
    for (Eigen::Index j = 0; j < y.size(); ++j) {
      const double dq = q_kernel_df(loss, y[j], f[j]);
      for (Eigen::Index s = 0; s < S; ++s)
        g[s] += -2.0 * dq * cv.loo[static_cast<std::size_t>(s)][i][j];
    }
  }
  return g;
}

WeightResult minimize_weights(const CvPredictionMatrix& cv, const ClusteredDataset& data,
                              const LossSpec& loss, const OptimizerConfig& cfg) {
  const Eigen::Index S = cv.n_candidates();
  if (S == 0) fail(ErrorCode::ConfigError, "minimize_weights: no candidates");
  if (!(cfg.tol > 0.0)) fail(ErrorCode::ConfigError, "minimize_weights: tol must be positive");

  // vertex criteria; degenerate instances tie-break to uniform
  Eigen::VectorXd vertex_crit(S);
  for (Eigen::Index s = 0; s < S; ++s) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(S);
    e[s] = 1.0;
    vertex_crit[s] = criterion_cn(e, cv, data, loss);
  }
  const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(S, 1.0 / static_cast<double>(S));
  const double uniform_crit = criterion_cn(uniform, cv, data, loss);

  WeightResult out;
  if (S == 1 || vertex_crit.maxCoeff() - vertex_crit.minCoeff() < 1e-12) {
    out.weights = uniform;
    out.criterion = uniform_crit;
    return out;
  }

  Eigen::VectorXd w = uniform;
  double cur = uniform_crit;
  Eigen::VectorXd best_w = w;
  double best = cur;

  const bool smooth = loss.kind != LossKind::Check;
  double step0 = 1.0;
  int schedule_iter = 0;  // switches on once Armijo stops making progress
  const double scale = std::max(1.0, std::abs(cur));
  bool converged = false;

  for (int it = 0; it < cfg.max_iters && !converged; ++it) {
    out.iterations = it + 1;
    Eigen::VectorXd g = criterion_gradient(w, cv, data, loss);
    const double gnorm = g.norm();
    if (gnorm < 1e-15) {
      converged = true;
      break;
    }

    bool accepted = false;
    if (schedule_iter == 0) {
      double t = step0;
      for (int bt = 0; bt < 40; ++bt) {
        Eigen::VectorXd w_try = simplex_project(w - t * g);
        const double c_try = criterion_cn(w_try, cv, data, loss);
        const double decrease = g.dot(w - w_try);
        if (c_try <= cur - 1e-4 * decrease && c_try <= cur) {
          const double rel = (cur - c_try) / std::max(1.0, std::abs(cur));
          w = w_try;
          cur = c_try;
          step0 = std::min(t * 2.0, 1e6);
          accepted = true;
          if (rel < cfg.tol && decrease / scale < cfg.tol) converged = true;
          break;
        }
        t *= 0.5;
      }
    }
    if (!accepted && !converged) {
      if (smooth && schedule_iter == 0) {
        converged = true;  // no descent direction left: stationary
      } else {
        // diminishing-step subgradient phase (check loss)
        ++schedule_iter;
        const double t =
            (0.1 / std::max(gnorm, 1e-12)) / std::sqrt(static_cast<double>(schedule_iter));
        w = simplex_project(w - t * g);
        cur = criterion_cn(w, cv, data, loss);
        if (schedule_iter > 300) converged = true;
      }
    }
    if (cur < best) {
      best = cur;
      best_w = w;
    }
  }
  out.max_iters_reached = !converged;

  // never worse than any vertex or the uniform start
  out.weights = best_w;
  out.criterion = best;
  Eigen::Index s_best;
  const double v_best = vertex_crit.minCoeff(&s_best);
  if (v_best < out.criterion) {
    out.weights = Eigen::VectorXd::Zero(S);
    out.weights[s_best] = 1.0;
    out.criterion = v_best;
  }
  if (uniform_crit < out.criterion) {
    out.weights = uniform;
    out.criterion = uniform_crit;
  }
  return out;
}

}  // namespace macv
