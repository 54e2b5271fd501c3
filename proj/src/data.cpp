#include "macv/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

namespace macv {

Eigen::Index ClusteredDataset::total_obs() const {
  Eigen::Index t = 0;
  for (const auto& s : subjects) t += s.size();
  return t;
}

const char* family_name(Family f) {
  switch (f) {
    case Family::GeeBernoulli: return "gee_bernoulli";
    case Family::GeePoisson: return "gee_poisson";
    case Family::Sar: return "sar";
    case Family::QuantileReg: return "quantile";
  }
  return "?";
}

const char* working_corr_name(WorkingCorr c) {
  switch (c) {
    case WorkingCorr::Independence: return "independence";
    case WorkingCorr::Exchangeable: return "exchangeable";
    case WorkingCorr::Ar1: return "ar1";
  }
  return "?";
}

void CandidateSpec::validate(Eigen::Index p) const {
  for (int c : covariate_subset) {
    if (c < 0 || c >= p) fail(ErrorCode::ConfigError, "covariate index out of range");
  }
  std::unordered_set<int> seen(covariate_subset.begin(), covariate_subset.end());
  if (static_cast<Eigen::Index>(seen.size()) != static_cast<Eigen::Index>(covariate_subset.size()))
    fail(ErrorCode::ConfigError, "duplicate covariate index in candidate");
  if (family == Family::Sar) {
    if (!spatial_weights) fail(ErrorCode::ConfigError, "SAR candidate needs spatial_weights");
    const auto& A = *spatial_weights;
    if (A.rows() != A.cols()) fail(ErrorCode::ConfigError, "spatial_weights must be square");
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      if (A(i, i) != 0.0) fail(ErrorCode::ConfigError, "spatial_weights must have zero diagonal");
    }
    if (!A.allFinite()) fail(ErrorCode::NonFiniteValue, "spatial_weights has non-finite entries");
  } else if (spatial_weights) {
    fail(ErrorCode::ConfigError, "spatial_weights only valid for SAR candidates");
  }
  if (family == Family::QuantileReg) {
    if (!(quantile_level > 0.0 && quantile_level < 1.0))
      fail(ErrorCode::ConfigError, "quantile_level must lie in (0,1)");
  }
}

Eigen::Index CandidateSpec::n_params() const {
  // GEE/QR: covariates + intercept. SAR: covariates + rho (no implicit intercept).
  return static_cast<Eigen::Index>(covariate_subset.size()) + 1;
}

bool is_valid_weight_vector(const Eigen::VectorXd& w, double sum_tol) {
  if (w.size() == 0) return false;
  for (Eigen::Index s = 0; s < w.size(); ++s) {
    if (!(w[s] >= -1e-12 && w[s] <= 1.0 + 1e-12)) return false;
  }
  return std::abs(w.sum() - 1.0) <= sum_tol;
}

ClusteredDataset validate_dataset(ClusteredDataset raw) {
  std::vector<std::string> problems;
  std::unordered_set<std::string> ids;
  for (const auto& s : raw.subjects) {
    if (!ids.insert(s.id).second)
      problems.push_back("DuplicateSubjectId: subject '" + s.id + "'");
    if (s.y.size() < 1)
      problems.push_back("ShapeMismatch: subject '" + s.id + "' has no responses");
    if (s.y.size() != s.x.rows())
      problems.push_back("ShapeMismatch: subject '" + s.id + "' y length " +
                         std::to_string(s.y.size()) + " vs x rows " + std::to_string(s.x.rows()));
    if (s.x.cols() != raw.p)
      problems.push_back("ShapeMismatch: subject '" + s.id + "' has " +
                         std::to_string(s.x.cols()) + " covariates, dataset declares " +
                         std::to_string(raw.p));
    if (!s.y.allFinite() || !s.x.allFinite())
      problems.push_back("NonFiniteValue: subject '" + s.id + "'");
  }
  if (!problems.empty()) {
    std::string msg;
    for (const auto& pr : problems) msg += (msg.empty() ? "" : "; ") + pr;
    ErrorCode code = ErrorCode::ShapeMismatch;
    if (problems.front().rfind("DuplicateSubjectId", 0) == 0) code = ErrorCode::DuplicateSubjectId;
    if (problems.front().rfind("NonFiniteValue", 0) == 0) code = ErrorCode::NonFiniteValue;
    fail(code, msg);
  }
  return raw;
}

SplitResult split_train_test(const ClusteredDataset& data, double r_test, std::uint64_t seed) {
  const Eigen::Index n = data.n();
  if (!(r_test > 0.0 && r_test < 1.0)) fail(ErrorCode::ConfigError, "r_test must lie in (0,1)");
  if (n < 2) fail(ErrorCode::DegenerateSplit, "need at least 2 subjects to split");
  Eigen::Index n_test = static_cast<Eigen::Index>(std::floor(static_cast<double>(n) * r_test));
  if (n_test == 0 || n_test == n)
    fail(ErrorCode::DegenerateSplit, "split would leave an empty side");
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  SplitResult out;
  out.train.p = out.test.p = data.p;
  for (Eigen::Index k = 0; k < n; ++k) {
    const Subject& s = data.subjects[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])];
    (k < n_test ? out.test : out.train).subjects.push_back(s);
  }
  return out;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_num(const std::string& tok, const std::string& where) {
  try {
    std::size_t pos = 0;
    double v = std::stod(tok, &pos);
    if (pos != tok.size()) fail(ErrorCode::IoError, "trailing characters in '" + tok + "' " + where);
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail(ErrorCode::IoError, "cannot parse number '" + tok + "' " + where);
  }
}

}  // namespace

ClusteredDataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::IoError, "empty file " + path);
  auto header = split_line(line);
  if (header.size() < 3 || header[0] != "subject_id" || header[1] != "obs_index" || header[2] != "y")
    fail(ErrorCode::IoError, "expected header subject_id,obs_index,y,x1,... in " + path);
  const Eigen::Index p = static_cast<Eigen::Index>(header.size()) - 3;

  ClusteredDataset data;
  data.p = p;
  std::string cur_id;
  std::vector<double> ys;
  std::vector<double> xs;  // row-major n_i x p
  long last_obs = -1;
  int lineno = 1;

  auto flush = [&]() {
    if (cur_id.empty()) return;
    Subject s;
    s.id = cur_id;
    const Eigen::Index ni = static_cast<Eigen::Index>(ys.size());
    s.y = Eigen::Map<Eigen::VectorXd>(ys.data(), ni);
    s.x.resize(ni, p);
    for (Eigen::Index j = 0; j < ni; ++j)
      for (Eigen::Index k = 0; k < p; ++k) s.x(j, k) = xs[static_cast<std::size_t>(j * p + k)];
    data.subjects.push_back(std::move(s));
    ys.clear();
    xs.clear();
  };

  std::unordered_set<std::string> closed;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tok = split_line(line);
    const std::string where = "at line " + std::to_string(lineno) + " of " + path;
    if (static_cast<Eigen::Index>(tok.size()) != p + 3)
      fail(ErrorCode::IoError, "wrong field count " + where);
    if (tok[0] != cur_id) {
      flush();
      if (!closed.insert(tok[0]).second)
        fail(ErrorCode::DuplicateSubjectId, "subject '" + tok[0] + "' rows are not contiguous " + where);
      cur_id = tok[0];
      last_obs = -1;
    }
    long obs = static_cast<long>(parse_num(tok[1], where));
    if (obs <= last_obs) fail(ErrorCode::IoError, "obs_index not increasing " + where);
    last_obs = obs;
    ys.push_back(parse_num(tok[2], where));
    for (Eigen::Index k = 0; k < p; ++k)
      xs.push_back(parse_num(tok[static_cast<std::size_t>(3 + k)], where));
  }
  flush();
  return validate_dataset(std::move(data));
}

void write_dataset_csv(const ClusteredDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << "subject_id,obs_index,y";
  for (Eigen::Index k = 0; k < data.p; ++k) out << ",x" << (k + 1);
  out << "\n";
  out.precision(17);
  for (const auto& s : data.subjects) {
    for (Eigen::Index j = 0; j < s.size(); ++j) {
      out << s.id << "," << j << "," << s.y[j];
      for (Eigen::Index k = 0; k < data.p; ++k) out << "," << s.x(j, k);
      out << "\n";
    }
  }
}

Eigen::MatrixXd read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tok = split_line(line);
    std::vector<double> row;
    row.reserve(tok.size());
    for (const auto& t : tok) row.push_back(parse_num(t, "at line " + std::to_string(lineno)));
    if (!rows.empty() && rows.front().size() != row.size())
      fail(ErrorCode::IoError, "ragged matrix in " + path);
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

}  // namespace macv
