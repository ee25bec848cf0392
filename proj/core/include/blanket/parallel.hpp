#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace blanket {

/// Runs work(i) for i in [0, count) on up to `jobs` threads and hands each
/// result to commit(i, result) in ascending index order, one call at a time.
/// Output produced by commit is therefore identical for any job count.
/// The first exception thrown by work or commit is rethrown after all
/// threads have joined.
template <typename Work, typename Commit>
void ordered_parallel_for(std::size_t count, std::size_t jobs, Work work, Commit commit) {
    using Result = decltype(work(std::size_t{0}));
    std::atomic<std::size_t> next{0};
    std::mutex mutex;
    std::map<std::size_t, Result> pending;
    std::size_t committed = 0;
    std::exception_ptr failure;

    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            {
                std::lock_guard lock(mutex);
                if (failure) return;
            }
            try {
                Result r = work(i);
                std::lock_guard lock(mutex);
                pending.emplace(i, std::move(r));
                while (!failure) {
                    auto it = pending.find(committed);
                    if (it == pending.end()) break;
                    commit(committed, std::move(it->second));
                    pending.erase(it);
                    ++committed;
                }
            } catch (...) {
                std::lock_guard lock(mutex);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };

    const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, count));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
}

}  // namespace blanket
