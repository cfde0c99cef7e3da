#include "scnn/common.hpp"

#include <algorithm>
#include <atomic>

namespace scnn {

namespace {
std::atomic<int> g_num_threads{1};
}

int num_threads() { return g_num_threads.load(); }

void set_num_threads(int n) { g_num_threads.store(std::max(1, n)); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& f) {
  int jobs = std::min<std::size_t>(num_threads(), n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(jobs);
  std::size_t chunk = (n + jobs - 1) / jobs;
  for (int t = 0; t < jobs; ++t) {
    std::size_t lo = t * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([&f, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) f(i);
    });
  }
  for (auto& w : workers) w.join();
}

}  // namespace scnn
