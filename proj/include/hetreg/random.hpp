#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace hetreg {

// Deterministic random stream. All draws are derived from raw 64-bit output of
// a fixed generator, never from std distribution objects, so sequences are
// reproducible across compilers and standard libraries.
class RandomStream {
public:
    explicit RandomStream(uint64_t seed) {
        root_ = splitmix(seed ^ 0x9e3779b97f4a7c15ull);
        s0_ = splitmix(root_);
        s1_ = splitmix(s0_);
        if (s0_ == 0 && s1_ == 0) s1_ = 1;
        for (int i = 0; i < 4; ++i) next_u64();
    }

    uint64_t next_u64() {
        uint64_t x = s0_;
        const uint64_t y = s1_;
        s0_ = y;
        x ^= x << 23;
        s1_ = x ^ y ^ (x >> 17) ^ (y >> 26);
        return s1_ + y;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in (0, 1]
    double uniform_open0() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller with cached spare
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_open0();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    int64_t bounded(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            const int64_t j = bounded(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    // Independent child stream; forks with distinct ids do not overlap in practice.
    RandomStream fork(uint64_t stream_id) const {
        return RandomStream(splitmix(root_ ^ splitmix(stream_id + 0x632be59bd9b4e019ull)));
    }

private:
    static uint64_t splitmix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    uint64_t root_{0};
    uint64_t s0_{0}, s1_{0};
    double spare_{0.0};
    bool has_spare_{false};
};

}  // namespace hetreg
