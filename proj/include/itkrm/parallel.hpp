#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace itkrm {

/// Worker count: ITKRM_WORKERS if set and positive, else hardware threads.
inline unsigned worker_count() {
  if (const char* env = std::getenv("ITKRM_WORKERS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return static_cast<unsigned>(n);
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(task) for task in [0, tasks) on up to `workers` threads. Tasks
/// are claimed dynamically; bodies must only write task-private state.
inline void parallel_for(std::size_t tasks, const std::function<void(std::size_t)>& body,
                         unsigned workers = worker_count()) {
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, tasks));
  if (workers <= 1) {
    for (std::size_t t = 0; t < tasks; ++t) body(t);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  auto run = [&] {
    for (;;) {
      std::size_t t;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= tasks || error) return;
        t = next++;
      }
      try {
        body(t);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

/// In-place pairwise tree reduction of parts[0..n) into parts[0]; the
/// combination order depends only on n.
template <class T, class Combine>
void tree_reduce(std::vector<T>& parts, Combine combine) {
  for (std::size_t stride = 1; stride < parts.size(); stride *= 2)
    for (std::size_t i = 0; i + stride < parts.size(); i += 2 * stride) combine(parts[i], parts[i + stride]);
}

}  // namespace itkrm
