#pragma once

#include <string>
#include <vector>

#include "hc/analysis.hpp"

namespace hc::verify {

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<Check> checks;
  bool pass = false;
};

// Brute-force unfolding oracle: runs the connection recurrence with each
// layer's output replaced by a distinct basis tag and reads off every
// coefficient. Independent of analysis::unfold.
analysis::UnfoldedConnections unfold_tag_oracle(const std::vector<SiteWeights>& sites,
                                                std::int64_t n);

// inject_fault perturbs one designated fixture per suite so a named check
// must fail; used as the negative control.
SuiteReport run_algebra(bool inject_fault = false);
SuiteReport run_gradients(bool inject_fault = false);
SuiteReport run_unfolding(bool inject_fault = false);
SuiteReport run_accounting(bool inject_fault = false);
std::vector<SuiteReport> run_suites(const std::string& which, bool inject_fault = false);

bool all_pass(const std::vector<SuiteReport>& reports);
std::string reports_to_json(const std::vector<SuiteReport>& reports);

}  // namespace hc::verify
