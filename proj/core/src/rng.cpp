#include "coopnets/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace coopnets {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(base) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

void fill_normal(Engine& engine, std::span<double> out, double stddev) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : out) v = stddev * normal(engine);
}

std::string save_engine_state(const Engine& engine) {
  std::ostringstream os;
  os << engine;
  return os.str();
}

Engine load_engine_state(const std::string& state) {
  Engine engine;
  std::istringstream is(state);
  is >> engine;
  if (!is) throw std::invalid_argument("malformed RNG engine state");
  return engine;
}

}  // namespace coopnets
