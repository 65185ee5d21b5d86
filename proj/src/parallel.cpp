// parallel.cpp -- static-partition parallel_for with deterministic semantics.
#include "tailreg/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace tailreg {

int default_thread_count() {
    if (const char* env = std::getenv("TAILREG_THREADS")) {
        try {
            const int v = std::stoi(env);
            return std::clamp(v, 1, 256);
        } catch (...) {
            // fall through to hardware default on unparsable values
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn,
                  int threads) {
    if (count == 0) return;
    const std::size_t workers =
        std::min<std::size_t>(std::max(threads, 1), count);
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }

    // Contiguous blocks per worker; the partition depends only on (count,
    // workers) and each item owns its output slot, so scheduling cannot
    // change results.
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::size_t> first_failed(workers, count);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t base = count / workers;
    const std::size_t rem = count % workers;
    std::size_t begin = 0;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t len = base + (w < rem ? 1 : 0);
        const std::size_t end = begin + len;
        pool.emplace_back([&, w, begin, end]() {
            for (std::size_t i = begin; i < end; ++i) {
                try {
                    fn(i);
                } catch (...) {
                    if (!errors[w]) {
                        errors[w] = std::current_exception();
                        first_failed[w] = i;
                    }
                    return;
                }
            }
        });
        begin = end;
    }
    for (auto& t : pool) t.join();

    // Rethrow the failure with the smallest item index for determinism.
    std::size_t best = count;
    std::exception_ptr chosen;
    for (std::size_t w = 0; w < workers; ++w) {
        if (errors[w] && first_failed[w] < best) {
            best = first_failed[w];
            chosen = errors[w];
        }
    }
    if (chosen) std::rethrow_exception(chosen);
}

} // namespace tailreg
