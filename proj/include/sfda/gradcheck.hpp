#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace sfda {

// Worst element-wise relative error of an analytic gradient against central
// finite differences: |a - n| / max(|a|, |n|, floor), with the floor at
// 1e-3 of the largest gradient magnitude in the case so that near-zero
// components do not dominate.
double gradient_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric);

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t cases = 100;
  double op_tolerance = 1e-4;
  double end_to_end_tolerance = 1e-3;
  // Test hook: the analytic gradient of this suite is scaled by 1.01.
  std::string perturb_suite;
  // Restrict to suites whose name contains this substring (empty: all).
  std::string filter;
};

struct SuiteResult {
  std::string name;
  std::size_t cases = 0;
  double worst_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return worst_rel_error < tolerance; }
};

struct GradcheckReport {
  std::vector<SuiteResult> suites;
  bool passed() const;
  // One line per suite plus a summary line.
  std::string format() const;
};

std::vector<std::string> gradcheck_suite_names();
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace sfda
