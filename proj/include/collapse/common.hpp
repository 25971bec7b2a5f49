#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace collapse {

// Error hierarchy. Each maps to a CLI exit code: config/input problems -> 2,
// failed runtime checks (divergence, degenerate inputs) -> 1, violated theory
// preconditions -> 3.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct infeasible_error : config_error {
    using config_error::config_error;
};
struct budget_error : config_error {
    using config_error::config_error;
};
struct degenerate_input_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct diverged_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct no_guarantee_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
}  // namespace detail

// Deterministic PRNG. All sampling goes through the explicit helpers below so
// that equal seeds give bitwise-equal results on every platform; the standard
// library distributions are implementation-defined and are avoided on purpose.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t s = seed;
        for (auto& w : state_) w = detail::splitmix64(s);
    }

    std::uint64_t next_u64() {
        // xoshiro256++
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0,1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Rejection keeps the draw exactly uniform.
    int uniform_int(int n) {
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return static_cast<int>(x % bound);
    }

    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Independent substream, e.g. one per class for parallel evaluation.
    Rng fork(std::uint64_t stream) const {
        std::uint64_t s = state_[0] ^ (0x6a09e667f3bcc909ULL + stream * 0x9e3779b97f4a7c15ULL);
        return Rng(detail::splitmix64(s));
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t state_[4] = {};
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Words and concepts are 0-based everywhere in code; reports and file formats
// print them 1-based. word_column is the single place that flattens (concept,
// rank) to a vocabulary column.
inline int word_column(int alpha, int beta, int s_c) { return alpha * s_c + beta; }

}  // namespace collapse
