#include "docmi/rng.hpp"

#include <cmath>
#include <numbers>

#include "docmi/common.hpp"

namespace docmi {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

std::uint64_t fnv1a_u64(std::uint64_t h, std::uint64_t x) {
    for (int i = 0; i < 8; ++i) {
        h ^= (x >> (8 * i)) & 0xff;
        h *= kFnvPrime;
    }
    return h;
}

// Finalizer from splitmix64; full-avalanche mix of the stream key and counter.
std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace

Rng::Rng(std::uint64_t master_seed, std::string_view stream_name)
    : master_seed_(master_seed),
      key_(fnv1a(fnv1a_u64(kFnvOffset, master_seed), stream_name)) {}

Rng::Rng(std::uint64_t master_seed, std::uint64_t key)
    : master_seed_(master_seed), key_(key) {}

std::uint64_t Rng::next_u64() {
    return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_);
}

double Rng::uniform() {
    // 53 random bits -> double in [0, 1).
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
    require(n > 0, "Rng::below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
}

double Rng::normal() {
    if (cached_normal_) {
        double v = *cached_normal_;
        cached_normal_.reset();
        return v;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(theta);
    return r * std::cos(theta);
}

Rng Rng::fork(std::string_view child_name) const {
    return Rng(master_seed_, fnv1a(fnv1a_u64(key_, 0x5caff01dULL), child_name));
}

void Rng::shuffle(std::vector<int>& xs) {
    for (std::size_t i = xs.size(); i > 1; --i) {
        std::swap(xs[i - 1], xs[below(i)]);
    }
}

} // namespace docmi
