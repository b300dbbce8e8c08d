#pragma once

#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace a3fpn {

// Invalid shapes, group counts, kernel/parameter mismatches.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Caller broke an operation's precondition (wrong input sizes, reused tape, ...).
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Runtime numeric failure (non-finite coordinates, degenerate inputs).
struct ComputeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File / serialization problems, including incompatible checkpoints.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Portable deterministic PRNG (splitmix64). std::uniform_real_distribution is
// implementation-defined, so all randomness in the library goes through this.
struct Rng {
    std::uint64_t state;

    explicit Rng(std::uint64_t seed) : state(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // [0, 1) with 24 mantissa bits.
    float uniform() { return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f); }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }
};

namespace detail {
inline int& thread_override() {
    static int v = 0; // 0 = use env / hardware default
    return v;
}
} // namespace detail

// Caps internal parallelism. 0 restores the A3FPN_THREADS / default behavior.
inline void set_threads(int n) { detail::thread_override() = n; }

inline int thread_count() {
    if (detail::thread_override() > 0) return detail::thread_override();
    if (const char* env = std::getenv("A3FPN_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

// Splits [0, n) into contiguous chunks, one per worker. Each index is written
// by exactly one worker and every per-index reduction keeps its own serial
// order, so results are bitwise identical for any thread count.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
    const int threads = thread_count();
    if (threads <= 1 || n < 256) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::int64_t chunk = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads) - 1);
    for (int t = 1; t < threads; ++t) {
        const std::int64_t lo = t * chunk;
        const std::int64_t hi = std::min<std::int64_t>(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (std::int64_t i = 0; i < std::min<std::int64_t>(chunk, n); ++i) fn(i);
    for (auto& th : pool) th.join();
}

} // namespace a3fpn
