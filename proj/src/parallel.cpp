#include "semtrack/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace semtrack {

namespace {
thread_local bool t_in_parallel = false;

int read_worker_count() {
  if (const char* env = std::getenv("SEMTRACK_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}
}  // namespace

int worker_count() {
  static const int n = read_worker_count();
  return n;
}

void parallel_for_ranges(int n, const std::function<void(int, int)>& fn) {
  if (n <= 0) return;
  const int workers = std::min(worker_count(), n);
  if (workers <= 1 || t_in_parallel) {
    fn(0, n);
    return;
  }
  const int chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers) - 1);
  for (int w = 1; w < workers; ++w) {
    const int begin = w * chunk;
    const int end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] {
      t_in_parallel = true;
      fn(begin, end);
      t_in_parallel = false;
    });
  }
  t_in_parallel = true;
  fn(0, std::min(n, chunk));
  t_in_parallel = false;
  for (auto& t : pool) t.join();
}

void parallel_for(int n, const std::function<void(int)>& fn) {
  parallel_for_ranges(n, [&fn](int begin, int end) {
    for (int i = begin; i < end; ++i) fn(i);
  });
}

}  // namespace semtrack
