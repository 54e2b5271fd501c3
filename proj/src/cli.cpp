#include "macv/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

namespace macv {

namespace {

using nlohmann::json;

int log_level() {
  const char* env = std::getenv("MACV_LOG");
  return env ? std::atoi(env) : 1;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[macv] " << msg << "\n";
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string iso_now() {
  const auto t = std::time(nullptr);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

WorkingCorr working_corr_from_name(const std::string& s) {
  if (s == "independence") return WorkingCorr::Independence;
  if (s == "exchangeable") return WorkingCorr::Exchangeable;
  if (s == "ar1") return WorkingCorr::Ar1;
  fail(ErrorCode::ConfigError, "unknown working correlation '" + s + "'");
}

Family family_from_name(const std::string& s) {
  if (s == "gee_bernoulli") return Family::GeeBernoulli;
  if (s == "gee_poisson") return Family::GeePoisson;
  if (s == "sar") return Family::Sar;
  if (s == "quantile") return Family::QuantileReg;
  fail(ErrorCode::ConfigError, "unknown family '" + s + "'");
}

SealConfig parse_seal(const json& j) {
  SealConfig cfg;
  if (j.contains("max_newton_iters")) cfg.max_newton_iters = j.at("max_newton_iters").get<int>();
  if (j.contains("tol")) cfg.tol = j.at("tol").get<double>();
  if (j.contains("inverse_mode")) {
    const std::string m = j.at("inverse_mode").get<std::string>();
    if (m == "exact") cfg.inverse_mode = SealInverseMode::ExactSolve;
    else if (m == "second_order") cfg.inverse_mode = SealInverseMode::SecondOrderApprox;
    else fail(ErrorCode::ConfigError, "inverse_mode must be exact|second_order");
  }
  return cfg;
}

json method_summary_json(const ResultsTable& table, Eigen::Index k) {
  auto s = summarize_losses(table.method_losses, k);
  json out;
  out["mean"] = s.mean;
  out["q25"] = s.q25;
  out["q50"] = s.q50;
  out["q75"] = s.q75;
  out["seconds"] = table.method_seconds.at(table.methods[static_cast<std::size_t>(k)]);
  return out;
}

}  // namespace

LossSpec parse_loss_flag(const std::string& flag) {
  if (flag == "bernoulli") return LossSpec::bernoulli();
  if (flag == "poisson") return LossSpec::poisson();
  if (flag == "squared") return LossSpec::squared();
  if (flag.rfind("check:", 0) == 0) return LossSpec::check(std::stod(flag.substr(6)));
  fail(ErrorCode::ConfigError, "loss must be bernoulli|poisson|squared|check:<alpha>");
}

std::vector<CandidateSpec> load_candidates_config(const std::string& path, Eigen::Index p) {
  json j = json::parse(read_file(path));
  std::vector<CandidateSpec> out;

  auto parse_one = [&](const json& cj) {
    CandidateSpec spec;
    spec.family = family_from_name(cj.at("family").get<std::string>());
    if (cj.contains("covariates")) {
      for (int c : cj.at("covariates").get<std::vector<int>>())
        spec.covariate_subset.push_back(c - 1);  // configs are 1-based
    }
    if (cj.contains("working_correlation"))
      spec.working_correlation = working_corr_from_name(cj.at("working_correlation").get<std::string>());
    if (cj.contains("alpha")) spec.quantile_level = cj.at("alpha").get<double>();
    if (cj.contains("spatial_weights")) {
      auto A = std::make_shared<Eigen::MatrixXd>(
          read_matrix_csv(cj.at("spatial_weights").get<std::string>()));
      spec.spatial_weights = std::move(A);
    }
    spec.validate(p);
    return spec;
  };

  if (j.contains("candidates")) {
    for (const auto& cj : j.at("candidates")) out.push_back(parse_one(cj));
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    const Family fam = family_from_name(g.at("family").get<std::string>());
    std::vector<int> optional;
    for (int c : g.at("optional_covariates").get<std::vector<int>>()) optional.push_back(c - 1);
    std::vector<WorkingCorr> wcs{WorkingCorr::Independence};
    if (g.contains("working_correlations")) {
      wcs.clear();
      for (const auto& w : g.at("working_correlations"))
        wcs.push_back(working_corr_from_name(w.get<std::string>()));
    }
    for (WorkingCorr wc : wcs) {
      for (std::uint64_t mask = 0; mask < (1ULL << optional.size()); ++mask) {
        CandidateSpec spec;
        spec.family = fam;
        spec.working_correlation = wc;
        for (std::size_t k = 0; k < optional.size(); ++k)
          if (mask & (1ULL << k)) spec.covariate_subset.push_back(optional[k]);
        spec.validate(p);
        out.push_back(std::move(spec));
      }
    }
  }
  if (out.empty()) fail(ErrorCode::ConfigError, "no candidates defined in " + path);
  return out;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed_override) {
  std::string raw;
  json j;
  try {
    raw = read_file(config_path);
    j = json::parse(raw);
  } catch (const json::parse_error& e) {
    std::cerr << "config parse error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  ExperimentConfig cfg;
  try {
    const std::string design = j.value("design", "design1");
    if (design != "design1") fail(ErrorCode::ConfigError, "unknown design '" + design + "'");
    cfg.design.n = j.at("n").get<Eigen::Index>();
    cfg.design.cluster_size = j.value("cluster_size", 4);
    cfg.design.rho = j.at("rho").get<double>();
    const std::string resp = j.at("response").get<std::string>();
    if (resp == "binary") cfg.design.response = ResponseKind::Binary;
    else if (resp == "count") cfg.design.response = ResponseKind::Count;
    else fail(ErrorCode::ConfigError, "response must be binary|count");
    auto beta = j.at("beta").get<std::vector<double>>();
    cfg.design.beta = Eigen::Map<Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
    cfg.design.M = j.at("M").get<int>();
    cfg.design.seed = j.at("seed").get<std::uint64_t>();
    if (seed_override) cfg.design.seed = *seed_override;
    if (j.contains("methods")) {
      cfg.methods.clear();
      for (const auto& mj : j.at("methods")) cfg.methods.push_back(method_from_name(mj.get<std::string>()));
    }
    if (j.contains("working_correlations")) {
      cfg.working_correlations.clear();
      for (const auto& w : j.at("working_correlations"))
        cfg.working_correlations.push_back(working_corr_from_name(w.get<std::string>()));
    }
    if (j.contains("seal")) cfg.seal = parse_seal(j.at("seal"));
    cfg.record_weights = j.value("record_weights", false);
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }

  const std::string started = iso_now();
  const auto t0 = std::chrono::steady_clock::now();
  ResultsTable table;
  try {
    table = run_experiment(cfg);
  } catch (const Error& e) {
    std::cerr << "experiment failed: " << e.what() << "\n";
    return 1;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  {
    std::ofstream csv(out_dir + "/results.csv");
    csv.precision(12);
    csv << "replication,method,scaled_loss\n";
    for (Eigen::Index m = 0; m < table.method_losses.rows(); ++m) {
      for (std::size_t k = 0; k < table.methods.size(); ++k) {
        csv << (m + 1) << "," << method_name(table.methods[k]) << ","
            << table.method_losses(m, static_cast<Eigen::Index>(k)) << "\n";
      }
    }
  }
  {
    std::ofstream csv(out_dir + "/candidate_losses.csv");
    csv.precision(12);
    csv << "replication";
    for (Eigen::Index s = 0; s < table.candidate_losses.cols(); ++s) csv << ",cand" << (s + 1);
    csv << "\n";
    for (Eigen::Index m = 0; m < table.candidate_losses.rows(); ++m) {
      csv << (m + 1);
      for (Eigen::Index s = 0; s < table.candidate_losses.cols(); ++s)
        csv << "," << table.candidate_losses(m, s);
      csv << "\n";
    }
  }
  if (cfg.record_weights) {
    std::ofstream csv(out_dir + "/ma_seal_weights.csv");
    csv.precision(12);
    for (const auto& w : table.ma_seal_weights) {
      for (Eigen::Index s = 0; s < w.size(); ++s) csv << (s ? "," : "") << w[s];
      csv << "\n";
    }
  }

  json summary;
  for (std::size_t k = 0; k < table.methods.size(); ++k)
    summary["methods"][method_name(table.methods[k])] =
        method_summary_json(table, static_cast<Eigen::Index>(k));
  summary["gamma_hat"] = table.gamma_hat;
  summary["lbar_m"] = table.lbar;
  summary["n_replications"] = cfg.design.M;
  summary["n_failed"] = table.n_failed;
  summary["fit_seconds"] = table.fit_seconds;
  summary["cv_seconds"] = table.cv_seconds;
  summary["wall_seconds"] = wall;
  summary["warnings"] = table.warnings;
  summary["config_hash"] = hex64(fnv1a64(raw));
  {
    std::ofstream js(out_dir + "/summary.json");
    js << summary.dump(2) << "\n";
  }

  json manifest;
  manifest["config_path"] = config_path;
  manifest["config"] = raw;
  manifest["config_hash"] = hex64(fnv1a64(raw));
  manifest["master_seed"] = cfg.design.seed;
  manifest["started"] = started;
  manifest["finished"] = iso_now();
  for (std::size_t k = 0; k < table.methods.size(); ++k)
    manifest["method_seconds"][method_name(table.methods[k])] =
        table.method_seconds.at(table.methods[k]);
  {
    std::ofstream js(out_dir + "/manifest.json");
    js << manifest.dump(2) << "\n";
  }

  log_info("simulate done: " + std::to_string(cfg.design.M) + " replications, " +
           std::to_string(table.n_failed) + " failed");
  return table.n_failed > 0 ? 2 : 0;
}

namespace {

struct AverageRun {
  std::vector<FitState> fits;
  CvPredictionMatrix cv;
  WeightResult weights;
  Eigen::VectorXd vertex_criteria;
  double build_seconds = 0.0;
};

AverageRun run_average(const ClusteredDataset& data, const std::vector<CandidateSpec>& candidates,
                       const LossSpec& loss, CvMode mode, const SealConfig& seal) {
  AverageRun out;
  out.fits.resize(candidates.size());
  parallel::parallel_for(candidates.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t s = lo; s < hi; ++s) out.fits[s] = fit_candidate(candidates[s], data);
  });
  const auto t0 = std::chrono::steady_clock::now();
  out.cv = build_cv_matrix(out.fits, data, seal, mode);
  out.build_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.weights = minimize_weights(out.cv, data, loss);
  const Eigen::Index S = static_cast<Eigen::Index>(candidates.size());
  out.vertex_criteria.resize(S);
  for (Eigen::Index s = 0; s < S; ++s) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(S);
    e[s] = 1.0;
    out.vertex_criteria[s] = criterion_cn(e, out.cv, data, loss);
  }
  return out;
}

}  // namespace

int cmd_average(const std::string& data_csv, const std::string& candidates_json,
                const std::string& loss_flag, const std::string& mode_flag,
                const std::string& out_dir) {
  try {
    const LossSpec loss = parse_loss_flag(loss_flag);
    CvMode mode;
    if (mode_flag == "seal") mode = CvMode::Seal;
    else if (mode_flag == "conventional") mode = CvMode::Conventional;
    else fail(ErrorCode::ConfigError, "mode must be seal|conventional");

    ClusteredDataset data = read_dataset_csv(data_csv);
    auto candidates = load_candidates_config(candidates_json, data.p);
    AverageRun run = run_average(data, candidates, loss, mode, SealConfig{});

    std::printf("weights (%s mode):\n", mode_flag.c_str());
    for (Eigen::Index s = 0; s < run.weights.weights.size(); ++s)
      std::printf("  candidate %2ld  w = %.6f   C_n(e_s) = %.6f\n", static_cast<long>(s + 1),
                  run.weights.weights[s], run.vertex_criteria[s]);
    std::printf("criterion at w_hat: %.6f\n", run.weights.criterion);

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    {
      nlohmann::json out;
      out["mode"] = mode_flag;
      out["loss"] = loss_flag;
      out["criterion"] = run.weights.criterion;
      out["cv_build_seconds"] = run.build_seconds;
      for (Eigen::Index s = 0; s < run.weights.weights.size(); ++s) {
        out["weights"].push_back(run.weights.weights[s]);
        out["vertex_criteria"].push_back(run.vertex_criteria[s]);
      }
      std::ofstream js(out_dir + "/weights.json");
      js << out.dump(2) << "\n";
    }
    {
      std::ofstream csv(out_dir + "/predictions.csv");
      csv.precision(12);
      csv << "subject_id,obs_index,prediction\n";
      for (std::size_t i = 0; i < data.subjects.size(); ++i) {
        Eigen::VectorXd f = Eigen::VectorXd::Zero(data.subjects[i].y.size());
        for (Eigen::Index s = 0; s < run.weights.weights.size(); ++s)
          if (run.weights.weights[s] != 0.0)
            f += run.weights.weights[s] * run.cv.insample[static_cast<std::size_t>(s)][i];
        for (Eigen::Index j = 0; j < f.size(); ++j)
          csv << data.subjects[i].id << "," << j << "," << f[j] << "\n";
      }
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_benchmark(const std::string& data_csv, const std::string& candidates_json,
                  const std::string& loss_flag, int repeats, const std::string& out_dir) {
  try {
    if (repeats < 1) fail(ErrorCode::ConfigError, "repeats must be >= 1");
    const LossSpec loss = parse_loss_flag(loss_flag);
    ClusteredDataset data = read_dataset_csv(data_csv);
    auto candidates = load_candidates_config(candidates_json, data.p);

    std::vector<double> seal_secs, conv_secs;
    Eigen::VectorXd w_seal, w_conv;
    for (int r = 0; r < repeats; ++r) {
      AverageRun rs = run_average(data, candidates, loss, CvMode::Seal, SealConfig{});
      AverageRun rc = run_average(data, candidates, loss, CvMode::Conventional, SealConfig{});
      seal_secs.push_back(rs.build_seconds);
      conv_secs.push_back(rc.build_seconds);
      w_seal = rs.weights.weights;
      w_conv = rc.weights.weights;
      std::printf("repeat %d: cv build  seal %.4fs  conventional %.4fs\n", r + 1,
                  rs.build_seconds, rc.build_seconds);
    }
    const double med_seal = quantile_type7(seal_secs, 0.5);
    const double med_conv = quantile_type7(conv_secs, 0.5);
    const double dw = (w_seal - w_conv).cwiseAbs().maxCoeff();
    std::printf("median: seal %.4fs  conventional %.4fs  speedup %.2fx\n", med_seal, med_conv,
                med_conv / std::max(med_seal, 1e-12));
    std::printf("max weight discrepancy |w_seal - w_conv|_inf = %.3e\n", dw);

    if (!out_dir.empty()) {
      namespace fs = std::filesystem;
      fs::create_directories(out_dir);
      nlohmann::json out;
      out["seal_seconds"] = seal_secs;
      out["conventional_seconds"] = conv_secs;
      out["median_seal_seconds"] = med_seal;
      out["median_conventional_seconds"] = med_conv;
      out["speedup"] = med_conv / std::max(med_seal, 1e-12);
      out["weight_discrepancy_inf"] = dw;
      std::ofstream js(out_dir + "/benchmark.json");
      js << out.dump(2) << "\n";
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace macv
