#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace volterra {

/// Runs fn(begin, end) over [0, count) split into fixed-size blocks.
/// Block boundaries depend only on (count, block_size), never on the worker
/// count, so any reduction performed per block and combined in block order
/// is bit-identical for 1..K workers.  fn must write only to disjoint state.
inline void parallel_blocks(std::size_t count, std::size_t block_size, int threads,
                            const std::function<void(std::size_t, std::size_t)>& fn) {
    if (count == 0) return;
    if (block_size == 0) block_size = count;
    const std::size_t n_blocks = (count + block_size - 1) / block_size;
    if (threads <= 1 || n_blocks == 1) {
        for (std::size_t b = 0; b < n_blocks; ++b)
            fn(b * block_size, std::min(count, (b + 1) * block_size));
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    auto worker = [&]() {
        for (;;) {
            const std::size_t b = next.fetch_add(1);
            if (b >= n_blocks || failed.load()) return;
            try {
                fn(b * block_size, std::min(count, (b + 1) * block_size));
            } catch (...) {
                if (!failed.exchange(true)) error = std::current_exception();
                return;
            }
        }
    };
    const int n_workers = static_cast<int>(std::min<std::size_t>(threads, n_blocks));
    std::vector<std::thread> pool;
    pool.reserve(n_workers - 1);
    for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

/// Default block size used by the solvers; fixed so results do not depend
/// on the worker count.
inline constexpr std::size_t kParallelBlock = 8192;

} // namespace volterra
