#ifndef MACV_CLI_HPP
#define MACV_CLI_HPP

#include <optional>
#include <string>

#include "macv/simgen.hpp"

namespace macv {

// Exit codes: 0 success, 1 usage/config error, 2 partial replication failures.
int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed_override = std::nullopt);

int cmd_average(const std::string& data_csv, const std::string& candidates_json,
                const std::string& loss_flag, const std::string& mode_flag,
                const std::string& out_dir);

int cmd_benchmark(const std::string& data_csv, const std::string& candidates_json,
                  const std::string& loss_flag, int repeats, const std::string& out_dir);

LossSpec parse_loss_flag(const std::string& flag);
std::vector<CandidateSpec> load_candidates_config(const std::string& path, Eigen::Index p);

}  // namespace macv

#endif
