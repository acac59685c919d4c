#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tide {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

// Fans one master seed out into independent named streams ("init",
// "dropout", "generator", ...) so that changing how one stream is consumed
// never perturbs another.
class SeedStreams {
public:
    explicit SeedStreams(std::uint64_t master) : master_(master) {}

    std::uint64_t seed_for(std::string_view name) const;
    Rng stream(std::string_view name) const { return Rng(seed_for(name)); }
    std::uint64_t master() const { return master_; }

private:
    std::uint64_t master_;
};

}  // namespace tide
