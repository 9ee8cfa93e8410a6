#pragma once

// Shared plumbing: error taxonomy, seeded RNG, 128-bit ids, hashing, logging.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace xlm {

// ---------------------------------------------------------------------------
// Errors. Each category gets its own type so callers and tests can tell
// "file is truncated" from "word not in vocabulary" without string matching.
// ---------------------------------------------------------------------------

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct shape_error : error { using error::error; };          // dimension mismatch
struct numeric_error : error { using error::error; };       // NaN input, zero norm
struct contract_error : error { using error::error; };      // API precondition broken
struct bounds_error : error { using error::error; };        // index out of range
struct config_error : error { using error::error; };        // invalid hyperparameter
struct length_error : error { using error::error; };        // sequence too long
struct vocab_error : error { using error::error; };         // out-of-vocabulary word
struct degenerate_entry_error : error { using error::error; };
struct freeze_violation_error : error { using error::error; };
struct generation_error : error { using error::error; };    // infeasible data generation
struct oracle_error : error { using error::error; };        // gold entry missing

struct persistence_error : error { using error::error; };
struct bad_magic_error : persistence_error { using persistence_error::persistence_error; };
struct version_mismatch_error : persistence_error { using persistence_error::persistence_error; };
struct truncated_file_error : persistence_error { using persistence_error::persistence_error; };

struct divergence_error : error {
    explicit divergence_error(const std::string& what, std::uint64_t step_index)
        : error(what), step(step_index) {}
    std::uint64_t step = 0;
};

// ---------------------------------------------------------------------------
// Rng: every random draw in the project flows through one of these, seeded
// explicitly. Uniform/normal/gumbel transforms are hand-rolled from raw bits
// so outputs do not depend on libstdc++ distribution internals.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform01() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    std::uint64_t uniform_u64(std::uint64_t n) {
        return n == 0 ? 0 : gen_() % n;
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        // Box-Muller; u1 kept away from 0.
        double u1 = uniform01();
        if (u1 < 1e-300) u1 = 1e-300;
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.283185307179586477 * u2);
    }

    // g = -log(-log(eps)), eps ~ U(0,1) clamped to [1e-10, 1-1e-10].
    double gumbel() {
        double eps = uniform01();
        if (eps < 1e-10) eps = 1e-10;
        if (eps > 1.0 - 1e-10) eps = 1.0 - 1e-10;
        return -std::log(-std::log(eps));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_u64(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
};

// ---------------------------------------------------------------------------
// 128-bit provenance identifier.
// ---------------------------------------------------------------------------

struct Uuid {
    std::uint64_t hi = 0;
    std::uint64_t lo = 0;

    static Uuid random(Rng& rng) { return Uuid{rng.next_u64(), rng.next_u64()}; }

    bool operator==(const Uuid&) const = default;

    bool is_nil() const { return hi == 0 && lo == 0; }

    std::string to_string() const {
        static const char* hex = "0123456789abcdef";
        std::string s(32, '0');
        for (int i = 0; i < 16; ++i) s[i] = hex[(hi >> (60 - 4 * i)) & 0xF];
        for (int i = 0; i < 16; ++i) s[16 + i] = hex[(lo >> (60 - 4 * i)) & 0xF];
        // canonical 8-4-4-4-12 grouping
        std::string out;
        out.reserve(36);
        for (int i = 0; i < 32; ++i) {
            if (i == 8 || i == 12 || i == 16 || i == 20) out.push_back('-');
            out.push_back(s[i]);
        }
        return out;
    }

    static Uuid parse(std::string_view text) {
        std::string digits;
        digits.reserve(32);
        for (char c : text)
            if (c != '-') digits.push_back(c);
        if (digits.size() != 32) throw contract_error("malformed uuid: " + std::string(text));
        auto nibble = [](char c) -> std::uint64_t {
            if (c >= '0' && c <= '9') return static_cast<std::uint64_t>(c - '0');
            if (c >= 'a' && c <= 'f') return static_cast<std::uint64_t>(c - 'a' + 10);
            if (c >= 'A' && c <= 'F') return static_cast<std::uint64_t>(c - 'A' + 10);
            throw contract_error("malformed uuid digit");
        };
        Uuid u;
        for (int i = 0; i < 16; ++i) u.hi = (u.hi << 4) | nibble(digits[i]);
        for (int i = 0; i < 16; ++i) u.lo = (u.lo << 4) | nibble(digits[16 + i]);
        return u;
    }
};

struct UuidHash {
    std::size_t operator()(const Uuid& u) const {
        return static_cast<std::size_t>(u.hi ^ (u.lo * 0x9E3779B97F4A7C15ull));
    }
};

// ---------------------------------------------------------------------------
// FNV-1a 64, used for determinism and freeze-immutability checks.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* bytes, std::size_t len,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

template <typename T>
std::uint64_t fnv1a64_span(const T* data, std::size_t count, std::uint64_t seed = 0xcbf29ce484222325ull) {
    return fnv1a64(data, count * sizeof(T), seed);
}

// ---------------------------------------------------------------------------
// Logging, controlled by XLM_LOG=debug|info (default info).
// ---------------------------------------------------------------------------

namespace logging {

inline bool debug_enabled() {
    static const bool on = [] {
        const char* v = std::getenv("XLM_LOG");
        return v != nullptr && std::string_view(v) == "debug";
    }();
    return on;
}

inline void info(const std::string& msg) { std::cerr << "[xlm] " << msg << "\n"; }

inline void debug(const std::string& msg) {
    if (debug_enabled()) std::cerr << "[xlm:debug] " << msg << "\n";
}

}  // namespace logging

}  // namespace xlm
