// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Optional arguments select criteria by number; -v prints every check's detail.

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "coopnets/eval.hpp"

int main(int argc, char** argv) {
  std::vector<int> ids;
  bool verbose = false;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "-v") {
      verbose = true;
    } else {
      ids.push_back(std::atoi(argv[i]));
    }
  }
  if (ids.empty()) ids = coopnets::suite_criteria("all");

  int failed = 0;
  for (int id : ids) {
    const auto start = std::chrono::steady_clock::now();
    coopnets::CriterionResult r;
    try {
      r = coopnets::run_criterion(id);
    } catch (const std::exception& e) {
      r = {id, "error", {{"exception", 0.0, "<=", 0.0, false, e.what()}}};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << r.summary() << fmt::format("  [{:.1f}s]", secs) << std::endl;
    if (!r.passed()) ++failed;
    if (verbose || !r.passed()) {
      for (const auto& c : r.checks) std::cout << fmt::format("      {}: {}\n", c.name, c.detail);
    }
  }
  std::cout << fmt::format("{}/{} criteria passed\n", ids.size() - std::size_t(failed), ids.size());
  return failed == 0 ? 0 : 1;
}
