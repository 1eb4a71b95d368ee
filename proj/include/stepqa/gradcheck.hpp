#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stepqa {

struct OpCheck {
  std::string name;
  double max_rel_error = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<OpCheck> ops;  // one entry per op kind plus the end-to-end model
  double threshold = 1e-4;
  bool pass = false;

  std::string to_text() const;
};

// Verifies every op kind and one full model loss against central finite
// differences (step 1e-5). `corrupt_for_testing` injects a deliberate analytic
// error into the first probe; the report must then fail.
GradCheckReport run_gradcheck(std::uint64_t seed, bool corrupt_for_testing = false);

}  // namespace stepqa
