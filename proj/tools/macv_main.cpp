#include <CLI11.hpp>

#include "macv/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"model averaging by cross-validation with fast leave-subject-out"};
  app.require_subcommand(1);

  int threads = 0;
  app.add_option("--threads", threads, "cap the worker pool (0 = all cores)");

  std::string config, out_dir, data_csv, loss = "bernoulli", mode = "seal";
  std::uint64_t seed_override = 0;
  bool have_seed = false;
  int repeats = 3;

  auto* sim = app.add_subcommand("simulate", "run a simulation experiment from a JSON config");
  sim->add_option("--config", config, "experiment config JSON")->required();
  sim->add_option("--out", out_dir, "output directory")->required();

  auto* avg = app.add_subcommand("average", "fit candidates and choose averaging weights");
  avg->add_option("--data", data_csv, "dataset CSV")->required();
  avg->add_option("--config", config, "candidates config JSON")->required();
  avg->add_option("--loss", loss, "bernoulli|poisson|squared|check:<alpha>");
  avg->add_option("--mode", mode, "seal|conventional");
  avg->add_option("--out", out_dir, "output directory")->required();

  auto* bench = app.add_subcommand("benchmark", "time SEAL against conventional refits");
  bench->add_option("--data", data_csv, "dataset CSV")->required();
  bench->add_option("--config", config, "candidates config JSON")->required();
  bench->add_option("--loss", loss, "bernoulli|poisson|squared|check:<alpha>");
  bench->add_option("--repeats", repeats, "timing repeats");
  bench->add_option("--out", out_dir, "optional output directory");

  auto* seed_opt = sim->add_option("--seed", seed_override, "override the config seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  have_seed = seed_opt->count() > 0;

  macv::parallel::set_max_threads(threads);

  if (sim->parsed())
    return macv::cmd_simulate(config, out_dir,
                              have_seed ? std::optional<std::uint64_t>(seed_override) : std::nullopt);
  if (avg->parsed()) return macv::cmd_average(data_csv, config, loss, mode, out_dir);
  if (bench->parsed()) return macv::cmd_benchmark(data_csv, config, loss, repeats, out_dir);
  return 1;
}
