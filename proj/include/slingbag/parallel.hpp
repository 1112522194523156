#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace slingbag::par {

/// Worker count: hardware concurrency, capped by the SLINGBAG_THREADS
/// environment variable when set. Re-read on every call so tests can
/// flip the cap at runtime.
inline std::size_t max_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SLINGBAG_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) n = std::min(n, static_cast<std::size_t>(v));
  }
  return n;
}

/// Runs fn(begin, end) over a static block partition of [0, n).
///
/// Determinism contract: every index is processed by exactly one worker and
/// callers only write to slots owned by their index range, so results are
/// bit-identical for any worker count. Exceptions from workers are rethrown
/// on the calling thread (first one wins).
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  if (n == 0) return;
  const std::size_t workers = std::min(max_threads(), n);
  if (workers <= 1) {
    fn(std::size_t{0}, n);
    return;
  }

  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, w, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace slingbag::par
