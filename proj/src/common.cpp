#include "macv/common.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <thread>

namespace macv {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

namespace parallel {

namespace {
std::atomic<int> g_max_threads{0};
}

void set_max_threads(int n) { g_max_threads.store(n < 0 ? 0 : n); }

int max_threads() {
  int n = g_max_threads.load();
  if (n > 0) return n;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  std::size_t workers = static_cast<std::size_t>(max_threads());
  workers = std::min(workers, n);
  if (workers <= 1) {
    body(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::size_t chunk = (n + workers - 1) / workers;
  std::exception_ptr first_error;
  std::mutex err_mutex;
  for (std::size_t w = 0; w < workers; ++w) {
    std::size_t lo = w * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        body(lo, hi);
      } catch (...) {
        std::lock_guard<std::mutex> g(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace parallel

double tree_sum(const std::vector<double>& terms) {
  if (terms.empty()) return 0.0;
  std::vector<double> level(terms);
  while (level.size() > 1) {
    std::size_t half = (level.size() + 1) / 2;
    std::vector<double> next(half);
    for (std::size_t k = 0; k + 1 < level.size(); k += 2) next[k / 2] = level[k] + level[k + 1];
    if (level.size() % 2 == 1) next[half - 1] = level.back();
    level.swap(next);
  }
  return level[0];
}

double quantile_type7(std::vector<double> v, double p) {
  if (v.empty()) fail(ErrorCode::DomainError, "quantile of empty sample");
  std::sort(v.begin(), v.end());
  if (p <= 0) return v.front();
  if (p >= 1) return v.back();
  double h = (static_cast<double>(v.size()) - 1.0) * p;
  std::size_t lo = static_cast<std::size_t>(std::floor(h));
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  double frac = h - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace macv
