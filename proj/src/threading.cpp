#include "ouhjb/threading.hpp"

#include <atomic>
#include <stdexcept>
#include <thread>
#include <vector>

namespace ouhjb {

namespace {
int g_threads = 0;  // 0 = pick from hardware
}

void set_thread_count(int n) {
  if (n < 0) throw std::invalid_argument("set_thread_count: n must be >= 0");
  g_threads = n;
}

int thread_count() {
  if (g_threads > 0) return g_threads;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for_chunks(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  std::size_t n_chunks = (n + kChunkSize - 1) / kChunkSize;
  int workers = thread_count();
  if (workers <= 1 || n_chunks == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) {
      fn(c * kChunkSize, std::min(n, (c + 1) * kChunkSize));
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::vector<std::exception_ptr> errors(n_chunks);
  auto work = [&] {
    while (true) {
      std::size_t c = next.fetch_add(1);
      if (c >= n_chunks || failed.load(std::memory_order_relaxed)) return;
      try {
        fn(c * kChunkSize, std::min(n, (c + 1) * kChunkSize));
      } catch (...) {
        errors[c] = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  // rethrow the error of the lowest chunk, matching the sequential order
  for (std::size_t c = 0; c < n_chunks; ++c) {
    if (errors[c]) std::rethrow_exception(errors[c]);
  }
}

double chunked_sum(std::size_t n, const std::function<double(std::size_t)>& term) {
  std::size_t n_chunks = (n + kChunkSize - 1) / kChunkSize;
  std::vector<double> partial(n_chunks, 0.0);
  parallel_for_chunks(n, [&](std::size_t begin, std::size_t end) {
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += term(i);
    partial[begin / kChunkSize] = s;
  });
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace ouhjb
