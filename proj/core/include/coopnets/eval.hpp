#pragma once

// Oracle and trend checks. Each criterion runs one or more checks, compares a
// measured value against a tolerance and reports both. Everything is seeded,
// so reruns produce identical results.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "coopnets/config.hpp"

namespace coopnets {

struct CheckResult {
  std::string name;
  double measured = 0.0;
  std::string relation = "<=";  // measured <relation> threshold must hold
  double threshold = 0.0;
  bool passed = false;
  std::string detail;
};

struct CriterionResult {
  int id = 0;
  std::string title;
  std::vector<CheckResult> checks;

  bool passed() const;
  /// One line: "PASS  3 langevin-stationarity  rel_var_error=0.0081 (<= 0.05)".
  std::string summary() const;
};

inline constexpr int kCriterionCount = 11;

/// Runs criterion 1..kCriterionCount.
CriterionResult run_criterion(int id);

/// "oracles" (1-7, 9, 10), "trends" (8, 11) or "all".
std::vector<int> suite_criteria(std::string_view suite);

/// CSV with columns criterion,check,measured,relation,threshold,passed,detail.
void write_report(const std::filesystem::path& path, const std::vector<CriterionResult>& results);

// Individual criteria, exposed for tests.
CriterionResult check_gradient_fidelity();
CriterionResult check_adjoint_identity();
CriterionResult check_langevin_stationarity();
CriterionResult check_kl_decay();
CriterionResult check_descriptor_mle();
CriterionResult check_generator_ppca();
CriterionResult check_posterior_inference();
CriterionResult check_coop_toy();
CriterionResult check_autoencoder_mode();
CriterionResult check_inpainting();
CriterionResult check_determinism_resume();

/// A preset scaled down for finite-difference checks: signals at most
/// 16 x 16, at most 3 channels per layer, generator depth trimmed to fit.
RunConfig shrink_for_gradient_check(RunConfig cfg);

/// Central-difference agreement of both backward passes on `coordinates`
/// seeded coordinates each. Returns the worst relative errors.
struct GradientCheckStats {
  double descriptor_max_rel = 0.0;
  double generator_max_rel = 0.0;
  std::size_t descriptor_checked = 0;
  std::size_t generator_checked = 0;
  std::size_t skipped_kinks = 0;
};
GradientCheckStats finite_difference_check(const RunConfig& cfg, std::size_t coordinates, std::uint64_t seed);

}  // namespace coopnets
