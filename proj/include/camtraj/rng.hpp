#pragma once

#include <cmath>
#include <cstdint>

namespace camtraj {

// Counter-based generator: output i of stream (seed, stream) is a pure
// function of (seed, stream, i), so substreams can be forked without
// consuming state from the parent and replays are exact.
class Rng {
public:
    explicit Rng(uint64_t seed, uint64_t stream = 0)
        : key_(mix(seed ^ (stream * 0x9e3779b97f4a7c15ULL))) {}

    // Independent substream; deterministic in (parent seed, label).
    Rng fork(uint64_t label) const { return Rng(key_, label + 1); }

    uint64_t next_u64() { return mix(key_ + (++counter_) * 0xbf58476d1ce4e5b9ULL); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    template <typename Container>
    void shuffle(Container& c) {
        for (size_t i = c.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(c[i - 1], c[j]);
        }
    }

private:
    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t key_;
    uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace camtraj
