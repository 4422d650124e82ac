#pragma once

#include "attnlab/dataset.hpp"

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace attnlab {

struct SelftestOptions {
  std::uint64_t seed = 0;
  // Mutation canary: negates the analytic gradient inside the gradient checks.
  bool corrupt_gradient = false;
};

struct PropertyResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelftestReport {
  std::vector<PropertyResult> results;
  bool all_passed() const;
};

SelftestReport run_selftest(const SelftestOptions& opts = {});
void print_report(const SelftestReport& report, std::ostream& os);

// Copies of every sample, one per distinct token it contains, each labelled
// with that token. Every graph then collapses to a single SCC.
Dataset all_labels_dataset(const Dataset& ds);

}  // namespace attnlab
