#pragma once

// Deterministic parallel map and named random streams.  Work is split into
// fixed tasks whose results are combined in task order, so output never
// depends on the number of workers.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <random>
#include <string_view>
#include <thread>
#include <vector>

namespace sgforms {

/// Runs fn(i) for i in [0, count) on up to `workers` threads.  The first
/// exception thrown by any task is rethrown after all threads join.
template <typename Fn>
void parallel_for(std::size_t count, unsigned workers, Fn&& fn) {
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_guard;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_guard);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

template <typename R, typename Fn>
std::vector<R> parallel_map(std::size_t count, unsigned workers, Fn&& fn) {
    std::vector<R> out(count);
    parallel_for(count, workers, [&](std::size_t i) { out[i] = fn(i); });
    return out;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Seed of a named sub-stream: mixes the parent seed with a label and indices.
class StreamSeed {
public:
    explicit StreamSeed(std::uint64_t seed) : state_(splitmix64(seed)) {}

    StreamSeed child(std::string_view label) const {
        std::uint64_t h = 0xCBF29CE484222325ull;
        for (unsigned char c : label) h = (h ^ c) * 0x100000001B3ull;
        return StreamSeed(state_, h);
    }
    StreamSeed child(std::uint64_t index) const { return StreamSeed(state_, splitmix64(index ^ 0xA5A5A5A5A5A5A5A5ull)); }

    std::uint64_t value() const { return state_; }
    std::mt19937_64 engine() const { return std::mt19937_64(state_); }

private:
    StreamSeed(std::uint64_t parent, std::uint64_t salt) : state_(splitmix64(parent ^ splitmix64(salt))) {}
    std::uint64_t state_;
};

/// Unbiased uniform integer in [0, range) by rejection; identical on every
/// standard library (std::uniform_int_distribution is not).
inline std::uint64_t uniform_below(std::mt19937_64& gen, std::uint64_t range) {
    const std::uint64_t limit = (std::numeric_limits<std::uint64_t>::max() / range) * range;
    std::uint64_t r;
    do {
        r = gen();
    } while (r >= limit);
    return r % range;
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform_unit(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

}  // namespace sgforms
