#pragma once

#include <cstddef>
#include <functional>

namespace ouhjb {

// Global worker count (CLI --threads). Work is always split into fixed-size
// chunks independent of the worker count, and reductions combine chunk
// results in index order, so outputs are identical for any thread count.
void set_thread_count(int n);
int thread_count();

inline constexpr std::size_t kChunkSize = 2048;

// Runs fn(begin, end) over [0, n) in chunks of kChunkSize. fn must write only
// to disjoint, chunk-owned locations.
void parallel_for_chunks(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& fn);

// Deterministic reduction: term(i) summed in fixed chunk order.
double chunked_sum(std::size_t n, const std::function<double(std::size_t)>& term);

}  // namespace ouhjb
