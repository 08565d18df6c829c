#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace sat {

// splitmix64: tiny, fully specified generator so that seeded runs and text
// dumps are stable across standard libraries.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Derive an independent stream seed from (seed, tag, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
    std::uint64_t s = seed ^ (0x9E3779B97F4A7C15ULL * (tag + 1));
    std::uint64_t a = splitmix64(s);
    s ^= index * 0xD1342543DE82EF95ULL + 0x2545F4914F6CDD1DULL;
    return a ^ splitmix64(s);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {
        // warm up so that small seeds diverge immediately
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_int(std::uint64_t n) {
        // multiply-shift; bias is negligible for desk-scale n
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Uniform integer in [lo, hi].
    std::int64_t uniform_range(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    /// Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    /// k distinct values from [0, n), in random order.
    std::vector<int> sample_distinct(int n, int k) {
        std::vector<int> pool(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
        shuffle(pool);
        pool.resize(static_cast<std::size_t>(k));
        return pool;
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace sat
