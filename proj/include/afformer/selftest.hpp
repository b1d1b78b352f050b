#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace afformer {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Quick property suites over every module, each against a brute-force
// recomputation. Deterministic for a given seed.
std::vector<SuiteResult> run_selftest(std::uint64_t seed = 0);

}  // namespace afformer
