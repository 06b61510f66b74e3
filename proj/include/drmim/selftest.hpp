#pragma once

#include <ostream>

namespace drmim {

// Gradient checks for every differentiable operation plus the estimator and
// metric identities. Prints one line per check; returns 0 when all pass.
int run_selftest(std::ostream& out);

}  // namespace drmim
