#include "macv/simgen.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

namespace macv {

namespace {

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::MatrixXd draw_covariates(std::mt19937_64& rng, Eigen::Index ni, Eigen::Index p) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd x(ni, p);
  for (Eigen::Index j = 0; j < ni; ++j)
    for (Eigen::Index k = 0; k < p; ++k) x(j, k) = gauss(rng);
  return x;
}

Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& x, const Eigen::VectorXd& beta) {
  return (x * beta.tail(beta.size() - 1)).array() + beta[0];
}

long poisson_quantile(double u, double mu) {
  // inverse CDF by pmf recursion; mu stays modest in these designs
  double pmf = std::exp(-mu);
  double cdf = pmf;
  long k = 0;
  const long cap = 2000 + static_cast<long>(20.0 * mu);
  while (cdf < u && k < cap) {
    ++k;
    pmf *= mu / static_cast<double>(k);
    cdf += pmf;
  }
  return k;
}

void check_design(const Design1Config& cfg) {
  if (cfg.beta.size() < 1) fail(ErrorCode::ConfigError, "design: beta must include an intercept");
  if (cfg.n < 1 || cfg.cluster_size < 1) fail(ErrorCode::ConfigError, "design: n and cluster_size must be positive");
  if (!(cfg.rho >= -1.0 && cfg.rho <= 1.0)) fail(ErrorCode::ConfigError, "design: rho outside [-1,1]");
}

}  // namespace

TruthBundle gen_binary_ar1(const Design1Config& cfg) {
  check_design(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  TruthBundle out;
  out.dataset.p = cfg.p();
  out.dataset.subjects.reserve(static_cast<std::size_t>(cfg.n));
  out.true_means.reserve(static_cast<std::size_t>(cfg.n));

  long rejections = 0;
  long attempts = 0;
  for (Eigen::Index i = 0; i < cfg.n; ++i) {
    for (;;) {
      ++attempts;
      Eigen::MatrixXd x = draw_covariates(rng, cfg.cluster_size, cfg.p());
      Eigen::VectorXd pm = linear_predictor(x, cfg.beta).unaryExpr([](double e) { return expit(e); });
      Eigen::VectorXd y(cfg.cluster_size);
      bool feasible = true;
      double prev_resid = 0.0;
      double prev_v = 0.0;
      for (Eigen::Index j = 0; j < cfg.cluster_size; ++j) {
        const double v = pm[j] * (1.0 - pm[j]);
        double lambda = pm[j];
        if (j > 0) lambda += cfg.rho * std::sqrt(v / prev_v) * prev_resid;
        if (lambda < 0.0 || lambda > 1.0) {
          feasible = false;
          break;
        }
        y[j] = unif(rng) < lambda ? 1.0 : 0.0;
        prev_resid = y[j] - pm[j];
        prev_v = v;
      }
      if (!feasible) {
        ++rejections;
        continue;
      }
      Subject s;
      s.id = std::to_string(i + 1);
      s.y = y;
      s.x = std::move(x);
      out.dataset.subjects.push_back(std::move(s));
      out.true_means.push_back(pm);
      break;
    }
  }
  if (attempts > 0 && static_cast<double>(rejections) / static_cast<double>(attempts) > 0.01)
    fail(ErrorCode::InfeasibleCorrelation,
         "binary AR(1) rejection rate above 1% (" + std::to_string(rejections) + "/" +
             std::to_string(attempts) + ")");
  return out;
}

namespace {

// Pooled lag-1 Pearson correlation of copula counts at latent correlation r.
double realized_count_corr(const Design1Config& cfg, double r, Eigen::Index clusters,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  long m = 0;
  for (Eigen::Index i = 0; i < clusters; ++i) {
    Eigen::MatrixXd x = draw_covariates(rng, cfg.cluster_size, cfg.p());
    Eigen::VectorXd mu = linear_predictor(x, cfg.beta).array().exp();
    double z_prev = 0.0;
    double y_prev = 0.0;
    for (Eigen::Index j = 0; j < cfg.cluster_size; ++j) {
      const double z = j == 0 ? gauss(rng) : r * z_prev + std::sqrt(1.0 - r * r) * gauss(rng);
      const double u = 0.5 * std::erfc(-z / std::sqrt(2.0));
      const double y = static_cast<double>(poisson_quantile(u, mu[j]));
      if (j > 0) {
        sx += y_prev;
        sy += y;
        sxx += y_prev * y_prev;
        syy += y * y;
        sxy += y_prev * y;
        ++m;
      }
      z_prev = z;
      y_prev = y;
    }
  }
  const double dm = static_cast<double>(m);
  const double cov = sxy / dm - (sx / dm) * (sy / dm);
  const double vx = sxx / dm - (sx / dm) * (sx / dm);
  const double vy = syy / dm - (sy / dm) * (sy / dm);
  return cov / std::sqrt(std::max(vx * vy, 1e-300));
}

}  // namespace

double calibrate_count_latent_rho(const Design1Config& cfg) {
  if (cfg.rho == 0.0) return 0.0;
  const Eigen::Index clusters = 30000;
  const std::uint64_t cal_seed = 0xca11b7a7edc0deULL;
  auto realized = [&](double r) { return realized_count_corr(cfg, r, clusters, cal_seed); };
  double lo = 0.0, hi = 0.995;
  double f_lo = realized(lo) - cfg.rho;
  double f_hi = realized(hi) - cfg.rho;
  if (f_lo > 0.0 || f_hi < 0.0)
    fail(ErrorCode::CalibrationFailure, "target lag-1 correlation not bracketed by the copula");
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = realized(mid) - cfg.rho;
    if (std::abs(fm) < 1e-3) return mid;
    (fm < 0.0 ? lo : hi) = mid;
    if (hi - lo < 1e-4) break;
  }
  return 0.5 * (lo + hi);
}

TruthBundle gen_count_ar1(const Design1Config& cfg) {
  check_design(cfg);
  double r = cfg.latent_rho;
  if (std::isnan(r)) r = calibrate_count_latent_rho(cfg);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  TruthBundle out;
  out.dataset.p = cfg.p();
  for (Eigen::Index i = 0; i < cfg.n; ++i) {
    Eigen::MatrixXd x = draw_covariates(rng, cfg.cluster_size, cfg.p());
    Eigen::VectorXd mu = linear_predictor(x, cfg.beta).array().exp();
    Eigen::VectorXd y(cfg.cluster_size);
    double z_prev = 0.0;
    for (Eigen::Index j = 0; j < cfg.cluster_size; ++j) {
      const double z = j == 0 ? gauss(rng) : r * z_prev + std::sqrt(1.0 - r * r) * gauss(rng);
      const double u = 0.5 * std::erfc(-z / std::sqrt(2.0));
      y[j] = static_cast<double>(poisson_quantile(u, mu[j]));
      z_prev = z;
    }
    Subject s;
    s.id = std::to_string(i + 1);
    s.y = y;
    s.x = std::move(x);
    out.dataset.subjects.push_back(std::move(s));
    out.true_means.push_back(mu);
  }
  return out;
}

SarTruth gen_sar(const Eigen::MatrixXd& X, const Eigen::VectorXd& eta0, double rho0,
                 const Eigen::MatrixXd& A0, double sigma, std::uint64_t seed) {
  const Eigen::Index n = eta0.size();
  if (A0.rows() != n || A0.cols() != n || X.rows() != n)
    fail(ErrorCode::ShapeMismatch, "gen_sar: dimension mismatch");
  if (rho0 != 0.0 && A0.cwiseAbs().maxCoeff() > 0.0) {
    const double norm_bound = std::min(A0.cwiseAbs().rowwise().sum().maxCoeff(),
                                       A0.cwiseAbs().colwise().sum().maxCoeff());
    if (std::abs(rho0) * norm_bound >= 1.0) {  // norm screen, then the spectrum
      Eigen::EigenSolver<Eigen::MatrixXd> es(rho0 * A0, false);
      double radius = 0.0;
      for (Eigen::Index k = 0; k < n; ++k) radius = std::max(radius, std::abs(es.eigenvalues()[k]));
      if (radius >= 1.0)
        fail(ErrorCode::UnstableSystem, "gen_sar: spectral radius of rho0*A0 is >= 1");
    }
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, sigma);
  Eigen::VectorXd v(n), v0(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = gauss(rng);
  for (Eigen::Index i = 0; i < n; ++i) v0[i] = gauss(rng);

  Eigen::MatrixXd I_rA = Eigen::MatrixXd::Identity(n, n) - rho0 * A0;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(I_rA);
  Eigen::VectorXd y = lu.solve(eta0 + v);

  SarTruth out;
  out.mean_y = lu.solve(eta0);
  out.y0 = eta0 + rho0 * (A0 * y) + v0;
  Eigen::VectorXd f0 = eta0 + rho0 * (A0 * out.mean_y);

  out.bundle.dataset.p = X.cols();
  for (Eigen::Index i = 0; i < n; ++i) {
    Subject s;
    s.id = std::to_string(i + 1);
    s.y = Eigen::VectorXd::Constant(1, y[i]);
    s.x = X.row(i);
    out.bundle.dataset.subjects.push_back(std::move(s));
    out.bundle.true_means.push_back(Eigen::VectorXd::Constant(1, f0[i]));
  }
  return out;
}

double metric_gamma_hat(const Eigen::MatrixXd& losses) {
  const Eigen::Index M = losses.rows();
  const Eigen::Index S = losses.cols();
  if (M < 2 || S < 2) fail(ErrorCode::ConfigError, "metric_gamma_hat needs M >= 2 and S >= 2");
  Eigen::MatrixXd centered = losses.rowwise() - losses.colwise().mean();
  Eigen::MatrixXd C = centered.transpose() * centered / static_cast<double>(M - 1);
  double sigma_sum = 0.0;
  for (Eigen::Index s = 0; s < S; ++s) sigma_sum += std::sqrt(std::max(C(s, s), 0.0));
  if (sigma_sum <= 0.0) fail(ErrorCode::ZeroVariance, "metric_gamma_hat: all losses constant");
  const double mean_sigma = sigma_sum / static_cast<double>(S);
  const double off_diag_sum = C.sum() - C.trace();  // = 2 sum_{s<s1} c_{s,s1}
  return off_diag_sum /
         (static_cast<double>(S) * static_cast<double>(S - 1) * mean_sigma * mean_sigma);
}

double metric_lbar(const Eigen::MatrixXd& losses) {
  if (losses.size() == 0) fail(ErrorCode::ConfigError, "metric_lbar: empty losses");
  return losses.mean();
}

double scaled_loss(const LossSpec& loss, const TruthBundle& truth,
                   const std::vector<Eigen::VectorXd>& predictions) {
  const std::size_t n = truth.true_means.size();
  if (predictions.size() != n) fail(ErrorCode::LengthMismatch, "scaled_loss: prediction count != n");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& mu = truth.true_means[i];
    acc += subject_q(loss, mu, predictions[i]) - subject_q(loss, mu, mu);
  }
  return -2.0 * acc * 10.0 / static_cast<double>(n);
}

double empirical_loss_case_study(const ClusteredDataset& test,
                                 const std::vector<Eigen::VectorXd>& method_mu,
                                 const std::vector<std::vector<Eigen::VectorXd>>& candidate_mu) {
  const std::size_t n = test.subjects.size();
  const LossSpec loss = LossSpec::bernoulli();
  auto neg2mean = [&](const std::vector<Eigen::VectorXd>& mu) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < test.subjects[i].y.size(); ++j) {
        const double m = mu[i][j];
        if (!(m > 0.0 && m < 1.0))
          fail(ErrorCode::DomainError, "empirical_loss_case_study: mu outside (0,1)");
      }
      acc += subject_q(loss, test.subjects[i].y, mu[i]);
    }
    return -2.0 * acc / static_cast<double>(n);
  };
  double best = std::numeric_limits<double>::infinity();
  for (const auto& cand : candidate_mu) best = std::min(best, neg2mean(cand));
  return neg2mean(method_mu) - best;
}

std::vector<CandidateSpec> design1_candidates(Eigen::Index p, Family family,
                                              const std::vector<WorkingCorr>& wcs) {
  if (p < 2) fail(ErrorCode::ConfigError, "design1_candidates needs p >= 2");
  const Eigen::Index optional = p - 1;  // covariate p is left out everywhere
  std::vector<CandidateSpec> out;
  out.reserve(wcs.size() << optional);
  for (WorkingCorr wc : wcs) {
    for (std::uint64_t mask = 0; mask < (1ULL << optional); ++mask) {
      CandidateSpec spec;
      spec.family = family;
      spec.working_correlation = wc;
      for (Eigen::Index k = 0; k < optional; ++k)
        if (mask & (1ULL << k)) spec.covariate_subset.push_back(static_cast<int>(k));
      out.push_back(std::move(spec));
    }
  }
  return out;
}

MethodSummary summarize_losses(const Eigen::MatrixXd& losses, Eigen::Index col) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(losses.rows()));
  for (Eigen::Index m = 0; m < losses.rows(); ++m) {
    if (std::isfinite(losses(m, col))) v.push_back(losses(m, col));
  }
  if (v.empty()) fail(ErrorCode::ConfigError, "summarize_losses: no finite rows");
  MethodSummary s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  s.q25 = quantile_type7(v, 0.25);
  s.q50 = quantile_type7(v, 0.50);
  s.q75 = quantile_type7(v, 0.75);
  return s;
}

ResultsTable run_experiment(const ExperimentConfig& cfg) {
  using clock = std::chrono::steady_clock;
  const Design1Config& d = cfg.design;
  if (d.M < 1) fail(ErrorCode::ConfigError, "run_experiment: M must be >= 1");
  const Family family =
      d.response == ResponseKind::Binary ? Family::GeeBernoulli : Family::GeePoisson;
  const LossSpec loss{default_loss_kind(family), 0.5};

  Design1Config design = d;
  if (design.response == ResponseKind::Count && std::isnan(design.latent_rho))
    design.latent_rho = calibrate_count_latent_rho(design);

  auto candidates = design1_candidates(design.p(), family, cfg.working_correlations);
  const Eigen::Index S = static_cast<Eigen::Index>(candidates.size());

  const bool want_conv = std::count(cfg.methods.begin(), cfg.methods.end(),
                                    Method::MaConventional) > 0;
  ResultsTable out;
  out.methods = cfg.methods;
  const Eigen::Index nm = static_cast<Eigen::Index>(cfg.methods.size());
  out.method_losses.setConstant(d.M, nm, std::numeric_limits<double>::quiet_NaN());
  out.candidate_losses.setConstant(d.M, S, std::numeric_limits<double>::quiet_NaN());
  if (cfg.record_weights) out.ma_seal_weights.assign(static_cast<std::size_t>(d.M), {});
  std::vector<double> method_secs(static_cast<std::size_t>(nm), 0.0);
  std::vector<std::string> rep_errors(static_cast<std::size_t>(d.M));
  bool imori_stub_seen = false;

  for (int m = 0; m < d.M; ++m) {
    try {
      Design1Config rep_cfg = design;
      rep_cfg.seed = hash_seed(d.seed, static_cast<std::uint64_t>(m));
      auto t0 = clock::now();
      TruthBundle truth = rep_cfg.response == ResponseKind::Binary ? gen_binary_ar1(rep_cfg)
                                                                   : gen_count_ar1(rep_cfg);

      std::vector<FitState> fits(static_cast<std::size_t>(S));
      parallel::parallel_for(static_cast<std::size_t>(S), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t s = lo; s < hi; ++s)
          fits[s] = fit_candidate(candidates[s], truth.dataset);
      });
      auto t1 = clock::now();
      out.fit_seconds += std::chrono::duration<double>(t1 - t0).count();

      CvPredictionMatrix cv = build_cv_matrix(fits, truth.dataset, cfg.seal, CvMode::Seal);
      std::optional<CvPredictionMatrix> cv_conv;
      if (want_conv)
        cv_conv = build_cv_matrix(fits, truth.dataset, cfg.seal, CvMode::Conventional);
      auto t2 = clock::now();
      out.cv_seconds += std::chrono::duration<double>(t2 - t1).count();

      // candidate in-sample losses feed gamma_hat and lbar
      for (Eigen::Index s = 0; s < S; ++s)
        out.candidate_losses(m, s) =
            scaled_loss(loss, truth, cv.insample[static_cast<std::size_t>(s)]);

      auto blend = [&](const Eigen::VectorXd& w) {
        std::vector<Eigen::VectorXd> pred(truth.dataset.subjects.size());
        for (std::size_t i = 0; i < pred.size(); ++i) {
          Eigen::VectorXd f = Eigen::VectorXd::Zero(truth.dataset.subjects[i].y.size());
          for (Eigen::Index s = 0; s < S; ++s)
            if (w[s] != 0.0) f += w[s] * cv.insample[static_cast<std::size_t>(s)][i];
          pred[i] = f;
        }
        return pred;
      };

      std::optional<MethodResult> qic_pan_res, qic_imori_res;
      for (Eigen::Index k = 0; k < nm; ++k) {
        auto tm0 = clock::now();
        Eigen::VectorXd w;
        switch (cfg.methods[static_cast<std::size_t>(k)]) {
          case Method::MaSeal: {
            auto res = minimize_weights(cv, truth.dataset, loss, cfg.optimizer);
            w = res.weights;
            if (cfg.record_weights) out.ma_seal_weights[static_cast<std::size_t>(m)] = w;
            break;
          }
          case Method::MaConventional: {
            auto res = minimize_weights(*cv_conv, truth.dataset, loss, cfg.optimizer);
            w = res.weights;
            break;
          }
          case Method::Equal:
            w = equal_weights(S);
            break;
          case Method::CvSelect:
            w = cv_select(cv, truth.dataset, loss).weights;
            break;
          case Method::QicPan: {
            if (!qic_pan_res) qic_pan_res = qic_select(fits, truth.dataset, false);
            w = qic_pan_res->weights;
            break;
          }
          case Method::QicImori: {
            if (!qic_imori_res) qic_imori_res = qic_select(fits, truth.dataset, true);
            imori_stub_seen = true;
            w = qic_imori_res->weights;
            break;
          }
        }
        out.method_losses(m, k) = scaled_loss(loss, truth, blend(w));
        method_secs[static_cast<std::size_t>(k)] +=
            std::chrono::duration<double>(clock::now() - tm0).count();
      }
    } catch (const Error& e) {
      rep_errors[static_cast<std::size_t>(m)] = e.what();
      ++out.n_failed;
    }
  }

  for (Eigen::Index k = 0; k < nm; ++k)
    out.method_seconds[cfg.methods[static_cast<std::size_t>(k)]] =
        method_secs[static_cast<std::size_t>(k)];
  if (imori_stub_seen)
    out.warnings.push_back("qic_imori evaluated as qic_pan (modified penalty not transcribed)");
  for (const auto& e : rep_errors)
    if (!e.empty()) out.warnings.push_back("replication failed: " + e);

  // metrics over successful replications
  std::vector<Eigen::Index> ok;
  for (Eigen::Index m = 0; m < d.M; ++m)
    if (std::isfinite(out.candidate_losses(m, 0))) ok.push_back(m);
  if (static_cast<Eigen::Index>(ok.size()) >= 2 && S >= 2) {
    Eigen::MatrixXd cl(static_cast<Eigen::Index>(ok.size()), S);
    for (Eigen::Index r = 0; r < cl.rows(); ++r)
      cl.row(r) = out.candidate_losses.row(ok[static_cast<std::size_t>(r)]);
    out.gamma_hat = metric_gamma_hat(cl);
    out.lbar = metric_lbar(cl);
  }
  return out;
}

}  // namespace macv
