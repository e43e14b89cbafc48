#pragma once

// Seed derivation and engine (de)serialization. Every stochastic component
// draws from its own engine seeded through derive_seed, so results do not
// depend on scheduling or thread count.

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace coopnets {

using Engine = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Stream `index` of the family rooted at `base`.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept;

void fill_normal(Engine& engine, std::span<double> out, double stddev = 1.0);

std::string save_engine_state(const Engine& engine);
Engine load_engine_state(const std::string& state);

}  // namespace coopnets
