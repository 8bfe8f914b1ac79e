#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace tmascan {

// Runs body(i) for i in [begin, end) on up to `jobs` threads. Items are
// handed out dynamically; the first exception thrown is rethrown after all
// workers join. jobs <= 1 runs inline.
template <typename Body>
void parallel_for(std::size_t begin, std::size_t end, int jobs, Body&& body)
{
    if (end <= begin) {
        return;
    }
    const std::size_t count = end - begin;
    const std::size_t workers = std::min<std::size_t>(jobs > 1 ? static_cast<std::size_t>(jobs) : 1, count);
    if (workers <= 1) {
        for (std::size_t i = begin; i < end; ++i) {
            body(i);
        }
        return;
    }

    std::atomic<std::size_t> next{begin};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= end) {
                    return;
                }
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                    next.store(end);
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

} // namespace tmascan
