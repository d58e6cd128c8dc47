#pragma once

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "circuitkl/errors.hpp"

namespace circuitkl {

// Runs fn(0) .. fn(n-1) across `workers` threads. Work items are claimed from
// an atomic counter, so scheduling varies between runs — callers must make
// fn(i) a pure function writing only to its own output slot, which keeps
// results identical for any worker count. If any item throws, the exception
// from the smallest failing index is rethrown after all threads have joined.
template <typename Fn>
void parallel_for(long long n, int workers, Fn&& fn) {
    if (workers < 1) throw UsageError("parallel_for: worker count must be >= 1");
    if (n <= 0) return;

    std::atomic<long long> next{0};
    std::mutex err_mutex;
    long long first_err_index = -1;
    std::exception_ptr first_err;

    auto body = [&]() {
        while (true) {
            long long i = next.fetch_add(1);
            if (i >= n) break;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (first_err_index < 0 || i < first_err_index) {
                    first_err_index = i;
                    first_err = std::current_exception();
                }
            }
        }
    };

    if (workers == 1) {
        body();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(static_cast<size_t>(workers));
        for (int w = 0; w < workers; ++w) threads.emplace_back(body);
        for (auto& t : threads) t.join();
    }
    if (first_err) std::rethrow_exception(first_err);
}

} // namespace circuitkl
