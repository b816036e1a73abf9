#pragma once

// Shared plumbing: error taxonomy, deterministic RNG, hashing, formatting.

#include <cstdint>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mlr {

/* ---- errors ------------------------------------------------------------ */

// All failures funnel through Error so the CLI can map them to exit codes:
// numeric failures exit 3, everything else (data/config/format/contract) 2.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
    virtual int exit_code() const { return 2; }
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// Misuse of an interface (wrong call order, bad argument domain).
class ContractError : public Error {
public:
    using Error::Error;
};

class CapacityError : public Error {
public:
    using Error::Error;
};

class SelectionError : public Error {
public:
    using Error::Error;
};

class StagingError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

// NaN/Inf anywhere in a forward pass, diverged training, degenerate metric.
class NumericError : public Error {
public:
    using Error::Error;
    int exit_code() const override { return 3; }
};

/* ---- hashing ----------------------------------------------------------- */

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t seed = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), seed);
}

// Stable sub-seed derivation: independent streams for data generation,
// parameter init, per-epoch shuffles, etc. hang off one master seed.
inline uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index = 0) {
    uint64_t h = fnv1a64(&master, sizeof(master));
    h = fnv1a64(tag, h);
    h = fnv1a64(&index, sizeof(index), h);
    return h;
}

/* ---- rng --------------------------------------------------------------- */

// splitmix64 stream. Distribution math is hand-rolled so sequences are
// identical across standard libraries (std:: distributions are not).
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Multiply-shift; bias is negligible for the
    // small ranges used here and the mapping is platform-stable.
    uint64_t uniform_int(uint64_t n) {
        return (uint64_t)(((__uint128_t)next_u64() * n) >> 64);
    }

    // Box-Muller. Consumes two draws per pair; caches the second.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = (size_t)uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/* ---- misc -------------------------------------------------------------- */

// Fixed 6-decimal formatting used by every CSV emitter.
inline std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline std::string hex64(uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)v);
    return buf;
}

}  // namespace mlr
