#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace sgimc {

// Runs `tasks[i]()` for all i on at most `threads` workers.  Tasks are
// independent by contract; results land in caller-owned slots indexed by
// task, so completion order never affects output order.
inline void run_task_bag(std::vector<std::function<void()>>& tasks, int threads) {
  if (threads < 1) threads = 1;
  if (tasks.empty()) return;
  if (threads == 1) {
    for (auto& t : tasks) t();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  const auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      try {
        tasks[i]();
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> workers;
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(threads), tasks.size());
  workers.reserve(n);
  for (std::size_t w = 0; w < n; ++w) workers.emplace_back(worker);
  for (auto& w : workers) w.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace sgimc
