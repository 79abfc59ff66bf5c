#pragma once

#include <cstdint>
#include <iosfwd>

namespace teaf {

struct SelfcheckOptions {
  std::uint64_t seed = 1;
  /* Deliberately corrupts one operator output inside the oracle battery so
   * the suite demonstrably catches a defect (the run must then fail). */
  bool inject_bug = false;
};

/* Runs every module's invariant battery, one summary line per check.
 * Returns the number of failed checks. */
int run_selfcheck(std::ostream& os, const SelfcheckOptions& opt);

}  // namespace teaf
