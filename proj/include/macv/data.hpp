#ifndef MACV_DATA_HPP
#define MACV_DATA_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "macv/common.hpp"

namespace macv {

// One subject (cluster): n_i responses and an n_i x p covariate matrix.
struct Subject {
  std::string id;
  Eigen::VectorXd y;
  Eigen::MatrixXd x;  // n_i x p

  Eigen::Index size() const { return y.size(); }
};

struct ClusteredDataset {
  std::vector<Subject> subjects;
  Eigen::Index p = 0;

  Eigen::Index n() const { return static_cast<Eigen::Index>(subjects.size()); }
  Eigen::Index total_obs() const;
};

enum class Family { GeeBernoulli, GeePoisson, Sar, QuantileReg };
enum class WorkingCorr { Independence, Exchangeable, Ar1 };

const char* family_name(Family f);
const char* working_corr_name(WorkingCorr c);

// One candidate model. Only the fields relevant to `family` are meaningful;
// validate() enforces that.
struct CandidateSpec {
  Family family = Family::GeeBernoulli;
  std::vector<int> covariate_subset;  // 0-based column indices into 0..p-1
  WorkingCorr working_correlation = WorkingCorr::Independence;           // GEE only
  std::shared_ptr<const Eigen::MatrixXd> spatial_weights;                // SAR only
  double quantile_level = 0.5;                                           // QR only

  bool is_gee() const { return family == Family::GeeBernoulli || family == Family::GeePoisson; }
  void validate(Eigen::Index p) const;
  // |subset| + intercept for GEE/QR, |subset| + 1 (rho) for SAR.
  Eigen::Index n_params() const;
};

// Weight vector invariants: entries in [0,1], sum within 1e-10 of one.
bool is_valid_weight_vector(const Eigen::VectorXd& w, double sum_tol = 1e-10);

// Checks all container invariants and reports every violation at once.
ClusteredDataset validate_dataset(ClusteredDataset raw);

struct SplitResult {
  ClusteredDataset train;
  ClusteredDataset test;
};

// Seeded permutation split; test gets floor(n * r_test) subjects.
SplitResult split_train_test(const ClusteredDataset& data, double r_test, std::uint64_t seed);

// CSV format: header `subject_id,obs_index,y,x1,...,xp`; one row per
// observation, rows of a subject contiguous and sorted by obs_index.
ClusteredDataset read_dataset_csv(const std::string& path);
void write_dataset_csv(const ClusteredDataset& data, const std::string& path);

Eigen::MatrixXd read_matrix_csv(const std::string& path);

}  // namespace macv

#endif
