#ifndef MACV_COMMON_HPP
#define MACV_COMMON_HPP

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace macv {

enum class ErrorCode {
  DuplicateSubjectId,
  ShapeMismatch,
  NonFiniteValue,
  DegenerateSplit,
  DomainError,
  LengthMismatch,
  RankDeficientInstruments,
  SingularJacobian,
  NoProgress,
  SingularInformation,
  InfeasibleCorrelation,
  CalibrationFailure,
  UnstableSystem,
  ZeroVariance,
  ConfigError,
  IoError,
};

struct Error : std::runtime_error {
  ErrorCode code;
  Error(ErrorCode c, const std::string& what) : std::runtime_error(what), code(c) {}
};

[[noreturn]] inline void fail(ErrorCode c, const std::string& what) { throw Error(c, what); }

// splitmix64; used to derive independent per-replication seeds from a master seed.
inline std::uint64_t hash_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a over raw bytes; content hash for run manifests.
inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v);

namespace parallel {

// Worker cap for all parallel loops. 0 = hardware concurrency.
void set_max_threads(int n);
int max_threads();

// Static contiguous partition of [0, n); each worker gets one chunk.
// Items must write only to their own slots; no reduction is performed here.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace parallel

// Pairwise tree sum; result does not depend on how the terms were produced,
// so criterion values are bit-stable across thread counts.
double tree_sum(const std::vector<double>& terms);

double quantile_type7(std::vector<double> sorted_or_not, double p);

}  // namespace macv

#endif
