// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace idsan {

// Worker cap: explicit request > IDSAN_THREADS env > hardware concurrency.
inline int resolve_thread_cap(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("IDSAN_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(0..n-1) on up to `threads` workers. Each index is independent;
// callers must write results into preallocated slots so the output does not
// depend on scheduling.
inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t)>& fn) {
  int cap = resolve_thread_cap(threads);
  if (cap <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cap), n);
  std::atomic<std::size_t> cursor{0};
  std::exception_ptr first_error;
  std::mutex err_mutex;
  std::vector<std::thread> team;
  team.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    team.emplace_back([&]() {
      for (;;) {
        std::size_t i = cursor.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : team) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace idsan
