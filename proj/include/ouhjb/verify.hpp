#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace ouhjb {

// One named invariant check. `measured` is the quantity the check bounds and
// `tolerance` the binding bound; `detail` spells out the comparison.
struct CheckResult {
  std::string id;
  bool pass = false;
  double measured = 0.0;
  double tolerance = 0.0;
  double runtime_s = 0.0;
  std::string detail;
};

struct VerificationReport {
  std::string suite;
  std::uint64_t seed = 0;
  std::vector<CheckResult> checks;

  bool all_pass() const;
  nlohmann::json to_json() const;
  std::string table() const;
};

// The six invariant suites. Check ids, statuses, measured values and
// tolerances are deterministic given the seed; runtimes are wall clock.
const std::vector<std::string>& suite_tags();
VerificationReport run_suite(const std::string& tag, std::uint64_t seed);

// Runs a small solve/control pipeline twice, with one worker and with four,
// and compares the serialized artifact bytes.
CheckResult determinism_check(std::uint64_t seed);

}  // namespace ouhjb
