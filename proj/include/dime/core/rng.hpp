#ifndef DIME_CORE_RNG_HPP
#define DIME_CORE_RNG_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <string>

namespace dime {

// Deterministic RNG used everywhere in the pipeline. Distributions are
// hand-rolled on top of mt19937_64 so that draws do not depend on the
// standard library's unspecified <random> distribution algorithms.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    // Independent substream derived from (seed, stream id). Used for
    // per-pair dataset generation and per-call gating noise.
    static Rng substream(uint64_t seed, uint64_t stream_id) {
        return Rng(mix64(seed ^ mix64(stream_id + 0x9e3779b97f4a7c15ull)));
    }

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range.
    int uniform_int(int lo, int hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(gen_() % span);
    }

    // Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Beta(a, b) as G_a / (G_a + G_b).
    double beta(double a, double b) {
        double ga = gamma_draw(a);
        double gb = gamma_draw(b);
        double s = ga + gb;
        if (s <= 0.0) return 0.5;
        return ga / s;
    }

    // Serialized engine state (decimal mt19937_64 stream plus the spare
    // normal cache), stable enough for checkpoint round trips.
    std::string state_string() const {
        std::ostringstream os;
        os << gen_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << spare_bits();
        return os.str();
    }

    void restore_state(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
        int flag = 0;
        uint64_t bits = 0;
        is >> flag >> bits;
        has_spare_ = (flag != 0);
        double d;
        static_assert(sizeof(d) == sizeof(bits));
        std::memcpy(&d, &bits, sizeof(d));
        spare_ = d;
    }

private:
    static uint64_t mix64(uint64_t x) {
        // splitmix64 finalizer
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    uint64_t spare_bits() const {
        uint64_t bits;
        std::memcpy(&bits, &spare_, sizeof(bits));
        return bits;
    }

    // Marsaglia-Tsang; the a < 1 case is boosted through G(a+1) * U^(1/a).
    double gamma_draw(double a) {
        if (a < 1.0) {
            double u = uniform();
            while (u <= 1e-300) u = uniform();
            return gamma_draw(a + 1.0) * std::pow(u, 1.0 / a);
        }
        double d = a - 1.0 / 3.0;
        double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 1e-300 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace dime

#endif
