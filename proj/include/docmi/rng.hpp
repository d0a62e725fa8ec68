#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace docmi {

// Counter-based deterministic generator. A stream is identified by
// (master seed, name); every draw advances a counter and hashes it, so two
// streams with the same identity always produce the same sequence no matter
// which thread owns them. All stochastic code in the project takes an
// explicit Rng, never a global.
class Rng {
public:
    Rng(std::uint64_t master_seed, std::string_view stream_name);

    std::uint64_t next_u64();

    // Uniform on [0, 1).
    double uniform();

    // Uniform integer in [0, n), rejection-sampled so the distribution is exact.
    std::uint64_t below(std::uint64_t n);

    // Standard normal via Box-Muller; the spare value is cached.
    double normal();

    // Derived stream: same master seed, child name appended. Forking does not
    // disturb the parent's counter.
    Rng fork(std::string_view child_name) const;

    void shuffle(std::vector<int>& xs);

    std::uint64_t master_seed() const { return master_seed_; }

private:
    Rng(std::uint64_t master_seed, std::uint64_t key);

    std::uint64_t master_seed_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    std::optional<double> cached_normal_;
};

} // namespace docmi
