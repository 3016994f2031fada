#include "ct/common/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace ct {

std::size_t worker_count() {
    if (const char* env = std::getenv("CT_THREADS")) {
        try {
            long v = std::stol(env);
            if (v > 0) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void parallel_shards(std::size_t n, std::size_t shards,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    shards = std::max<std::size_t>(1, std::min(shards, std::max<std::size_t>(n, 1)));
    auto bound = [&](std::size_t s) { return n * s / shards; };
    if (shards == 1) {
        fn(0, 0, n);
        return;
    }
    std::vector<std::exception_ptr> errors(shards);
    std::vector<std::thread> threads;
    threads.reserve(shards);
    for (std::size_t s = 0; s < shards; ++s) {
        threads.emplace_back([&, s] {
            try {
                fn(s, bound(s), bound(s + 1));
            } catch (...) {
                errors[s] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace ct
