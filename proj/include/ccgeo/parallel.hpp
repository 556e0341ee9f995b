#ifndef CCGEO_PARALLEL_HPP_
#define CCGEO_PARALLEL_HPP_

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ccgeo {

/// Default worker count: the machine's hardware concurrency (at least 1).
inline int default_jobs() {
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Calls fn(worker, i) for i in [0, count) on up to `jobs` threads. Work is
/// handed out dynamically, so results must only depend on i. The first
/// exception thrown by any call is rethrown after all workers stop.
template <class Fn>
void parallel_for(std::size_t count, int jobs, Fn&& fn) {
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(std::min<std::size_t>(count, 1024))));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(0, i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&](int w) {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(w, i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = count;
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < jobs; ++w) pool.emplace_back(worker, w);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace ccgeo

#endif  // CCGEO_PARALLEL_HPP_
