// parallel.hpp -- deterministic data parallelism.
//
// Work items write into pre-allocated, index-addressed slots and every
// reduction happens sequentially (or pairwise) in index order afterwards, so
// results are bit-identical no matter how many threads execute the loop.
#pragma once

#include <cstddef>
#include <functional>

namespace tailreg {

// Number of worker threads: the TAILREG_THREADS environment variable when set
// (clamped to [1, 256]), otherwise the hardware concurrency.
int default_thread_count();

// Run fn(i) for i in [0, count) across `threads` threads (static block
// partition). fn must only write to state owned by item i. threads <= 1 runs
// inline. Exceptions thrown by items are rethrown (the first by item index).
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn,
                  int threads);

} // namespace tailreg
