#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace localgp {

/// Worker-count policy: explicit request beats the LOCALGP_WORKERS
/// environment variable, which beats hardware concurrency. Always >= 1.
inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("LOCALGP_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

/// Static contiguous block partition of [0, count): worker t gets one
/// range whose bounds depend only on (count, workers), never on timing, so
/// any per-index output slot is written by exactly one worker and results
/// are reproducible across runs and worker counts. fn(begin, end, worker).
template <typename Fn>
inline void parallel_for(int count, int workers, Fn&& fn) {
  if (count <= 0) return;
  const int w = std::max(1, std::min(workers, count));
  if (w == 1) {
    fn(0, count, 0);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(w);
  const int base = count / w;
  const int rem = count % w;
  int begin = 0;
  pool.reserve(w);
  for (int t = 0; t < w; ++t) {
    const int end = begin + base + (t < rem ? 1 : 0);
    pool.emplace_back([&fn, &errors, begin, end, t] {
      try {
        fn(begin, end, t);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
    begin = end;
  }
  for (auto& th : pool) th.join();
  for (auto& ep : errors) {
    if (ep) std::rethrow_exception(ep);
  }
}

}  // namespace localgp
