#pragma once

#include <cmath>
#include <cstdint>

#include "bhp/errors.hpp"

namespace bhp {

// splitmix64 — used only to expand (seed, stream) pairs into engine state.
struct SplitMix64 {
    std::uint64_t state;

    explicit SplitMix64(std::uint64_t s) : state(s) {}

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
};

// xoshiro256++ with explicitly managed streams.
//
// The standard-library distributions are implementation-defined, so results
// would not be reproducible across compilers; everything random in this
// project goes through this class instead. A stream is a pure function of
// (seed, stream_id), which is what makes ensembles independent of thread
// count: replicate j always draws from stream j.
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t stream_id) {
        SplitMix64 sm(seed);
        std::uint64_t a = sm.next();
        std::uint64_t b = sm.next();
        SplitMix64 sm2(a ^ (0xD2B74407B1CE6E93ULL * (stream_id + 1) + b));
        for (auto& w : s_) w = sm2.next();
        if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[3] = 1;  // all-zero state is invalid
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1): never returns 0, safe under log().
    double uniform_pos() {
        double u;
        do {
            u = uniform();
        } while (u == 0.0);
        return u;
    }

    // Standard normal via the Marsaglia polar method (spare value cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    // Gamma(shape, scale) for shape >= 1: Marsaglia–Tsang squeeze/rejection.
    double gamma(double shape, double scale) {
        if (!(shape >= 1.0) || !(scale > 0.0))
            throw input_error("Rng::gamma requires shape >= 1 and scale > 0");
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform_pos();
            const double x2 = x * x;
            if (u < 1.0 - 0.0331 * x2 * x2) return d * v * scale;
            if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v * scale;
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace bhp
