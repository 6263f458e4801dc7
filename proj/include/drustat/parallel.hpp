#pragma once

#include <cstddef>
#include <functional>

namespace drustat {

/// Process-wide worker count used by parallel_for. Values < 1 are clamped to 1.
void set_thread_count(int threads);
int thread_count();

/// Runs body(begin, end) over contiguous chunks of [0, n). Chunk boundaries
/// depend only on n, never on the thread count, and callers write results into
/// per-index slots, so reductions done afterwards in index order are bitwise
/// identical for any number of threads. Nested calls run serially.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace drustat
