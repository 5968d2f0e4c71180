#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace superenv {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t& state)
{
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Child seed for (master, a, b); streams for distinct (a, b) are independent for practical purposes.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0)
{
    std::uint64_t s = master;
    std::uint64_t h = splitmix64(s);
    s = h ^ (a * 0xD1B54A32D192ED03ULL);
    h = splitmix64(s);
    s = h ^ (b * 0x8CB92BA72F3D8DD7ULL);
    return splitmix64(s);
}

inline Engine make_engine(std::uint64_t seed)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    return Engine(seq);
}

// Marsaglia polar method, written out so the stream does not depend on the
// standard library's distribution implementation.
class NormalSource {
public:
    double operator()(Engine& eng)
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = uniform_pm(eng);
            v = uniform_pm(eng);
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }
    void reset() { has_spare_ = false; }

private:
    static double uniform_pm(Engine& eng) { return 2.0 * to_unit(eng()) - 1.0; }
    static double to_unit(std::uint64_t x) { return static_cast<double>(x >> 11) * 0x1.0p-53; }
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline double uniform01(Engine& eng) { return static_cast<double>(eng() >> 11) * 0x1.0p-53; }

} // namespace superenv
