#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "macv/cli.hpp"
#include "macv/simgen.hpp"

using namespace macv;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_binary_dataset(const fs::path& dir, Eigen::Index n, std::uint64_t seed) {
  Design1Config cfg;
  cfg.n = n;
  cfg.beta = Eigen::VectorXd(6);
  cfg.beta << 0.2, 0.0, 0.0, 0.0, -0.5, 0.1;
  cfg.rho = 0.3;
  cfg.seed = seed;
  auto truth = gen_binary_ar1(cfg);
  fs::path p = dir / "data.csv";
  write_dataset_csv(truth.dataset, p);
  return p;
}

}  // namespace

TEST_CASE("cmd_simulate smoke run writes the full report set") {
  auto dir = temp_dir("macv_cli_sim");
  write_text(dir / "cfg.json", R"({
    "design": "design1", "n": 25, "rho": 0.3, "response": "binary",
    "beta": [0.2, 0, 0, 0, -0.5, 0.1], "M": 2, "seed": 7,
    "methods": ["ma_seal", "equal", "cv"]
  })");
  const int rc = cmd_simulate((dir / "cfg.json").string(), (dir / "out").string());
  CHECK(rc == 0);
  CHECK(fs::exists(dir / "out/results.csv"));
  CHECK(fs::exists(dir / "out/summary.json"));
  CHECK(fs::exists(dir / "out/manifest.json"));

  // results: one row per replication per method plus the header
  const std::string csv = read_text(dir / "out/results.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 3);

  auto summary = nlohmann::json::parse(read_text(dir / "out/summary.json"));
  for (const char* m : {"ma_seal", "equal", "cv"}) {
    CHECK(summary["methods"].contains(m));
    for (const char* k : {"mean", "q25", "q50", "q75"})
      CHECK(summary["methods"][m].contains(k));
  }

  // manifest hash recomputes from the stored config copy
  auto manifest = nlohmann::json::parse(read_text(dir / "out/manifest.json"));
  const std::string stored = manifest["config"].get<std::string>();
  CHECK(manifest["config_hash"].get<std::string>() == hex64(fnv1a64(stored)));
  fs::remove_all(dir);
}

TEST_CASE("cmd_simulate rejects malformed JSON with exit code 1") {
  auto dir = temp_dir("macv_cli_bad");
  write_text(dir / "cfg.json", "{ this is not json");
  CHECK(cmd_simulate((dir / "cfg.json").string(), (dir / "out").string()) == 1);
  fs::remove_all(dir);
}

TEST_CASE("cmd_simulate output is byte-identical for a fixed seed") {
  auto dir = temp_dir("macv_cli_repro");
  write_text(dir / "cfg.json", R"({
    "design": "design1", "n": 20, "rho": 0, "response": "binary",
    "beta": [0.2, 0, 0, 0, -0.5, 0.1], "M": 2, "seed": 99,
    "methods": ["ma_seal", "equal"]
  })");
  parallel::set_max_threads(1);
  CHECK(cmd_simulate((dir / "cfg.json").string(), (dir / "a").string()) == 0);
  CHECK(cmd_simulate((dir / "cfg.json").string(), (dir / "b").string()) == 0);
  parallel::set_max_threads(0);
  CHECK(read_text(dir / "a/results.csv") == read_text(dir / "b/results.csv"));
  CHECK(read_text(dir / "a/candidate_losses.csv") == read_text(dir / "b/candidate_losses.csv"));
  fs::remove_all(dir);
}

TEST_CASE("cmd_average on a single candidate prints weight one") {
  auto dir = temp_dir("macv_cli_avg1");
  auto data = write_binary_dataset(dir, 30, 5);
  write_text(dir / "cands.json", R"({
    "candidates": [
      {"family": "gee_bernoulli", "covariates": [4], "working_correlation": "ar1"}
    ]
  })");
  const int rc = cmd_average(data.string(), (dir / "cands.json").string(), "bernoulli", "seal",
                             (dir / "out").string());
  CHECK(rc == 0);
  auto w = nlohmann::json::parse(read_text(dir / "out/weights.json"));
  REQUIRE(w["weights"].size() == 1);
  CHECK(w["weights"][0].get<double>() == doctest::Approx(1.0));
  CHECK(fs::exists(dir / "out/predictions.csv"));
  fs::remove_all(dir);
}

TEST_CASE("cmd_average duplicated candidates tie-break to uniform weights") {
  auto dir = temp_dir("macv_cli_avg2");
  auto data = write_binary_dataset(dir, 25, 9);
  write_text(dir / "cands.json", R"({
    "candidates": [
      {"family": "gee_bernoulli", "covariates": [4], "working_correlation": "exchangeable"},
      {"family": "gee_bernoulli", "covariates": [4], "working_correlation": "exchangeable"}
    ]
  })");
  const int rc = cmd_average(data.string(), (dir / "cands.json").string(), "bernoulli", "seal",
                             (dir / "out").string());
  CHECK(rc == 0);
  auto w = nlohmann::json::parse(read_text(dir / "out/weights.json"));
  CHECK(w["weights"][0].get<double>() == doctest::Approx(0.5));
  CHECK(w["weights"][1].get<double>() == doctest::Approx(0.5));
  fs::remove_all(dir);
}

TEST_CASE("cmd_benchmark reports timings and a small weight discrepancy") {
  auto dir = temp_dir("macv_cli_bench");
  auto data = write_binary_dataset(dir, 40, 21);
  write_text(dir / "cands.json", R"({
    "grid": {
      "family": "gee_bernoulli",
      "optional_covariates": [1, 4],
      "working_correlations": ["exchangeable", "ar1"]
    }
  })");
  const int rc = cmd_benchmark(data.string(), (dir / "cands.json").string(), "bernoulli", 2,
                               (dir / "out").string());
  CHECK(rc == 0);
  auto b = nlohmann::json::parse(read_text(dir / "out/benchmark.json"));
  CHECK(b["seal_seconds"].size() == 2);
  CHECK(b["conventional_seconds"].size() == 2);
  CHECK(b["weight_discrepancy_inf"].get<double>() < 0.2);
  fs::remove_all(dir);
}

TEST_CASE("loss flag parsing") {
  CHECK(parse_loss_flag("bernoulli").kind == LossKind::BernoulliQL);
  CHECK(parse_loss_flag("poisson").kind == LossKind::PoissonQL);
  CHECK(parse_loss_flag("squared").kind == LossKind::Squared);
  auto c = parse_loss_flag("check:0.25");
  CHECK(c.kind == LossKind::Check);
  CHECK(c.alpha == doctest::Approx(0.25));
  CHECK_THROWS_AS(parse_loss_flag("huber"), Error);
}
