#pragma once

// Finite-difference checks of L_M (both hosts), L_MT (both hosts) and L_DT
// on tiny models.
//
// 64-bit: analytic and numeric gradients both in double.
// 32-bit: analytic gradient of the float implementation vs central
// differences of the double implementation at the same (float) parameters.

#include <string>
#include <vector>

#include "fsad/gradcheck.hpp"
#include "fsad/models.hpp"

namespace fsad {

inline constexpr double kGradTolerance64 = 1e-5;
inline constexpr double kGradTolerance32 = 1e-3;
// Relative-error denominator floor: below this magnitude a coordinate's
// gradient is dominated by difference cancellation (~1e-10 at 64-bit) and
// float32 accumulation noise, so errors there are measured in absolute terms.
inline constexpr double kGradAbsFloor = 1e-4;

struct GradcheckCase {
    std::string objective;  // e.g. "L_MT siamese"
    int bits = 64;
    GradcheckResult result;
    double tolerance = 0;
    bool pass() const { return result.max_rel_error < tolerance; }
};

struct GradcheckSuiteOptions {
    std::uint64_t seed = 0;
    std::size_t coords_per_tensor = 16;
    bool corrupt_gradient = false;  // test hook: scales analytic gradients by 1.05
    std::vector<int> precisions{64, 32};
};

// Tiny architecture: R = 16, 2x2 feature grid.
ModelConfig tiny_model_config(Host host);

std::vector<GradcheckCase> run_gradcheck_suite(const GradcheckSuiteOptions& opt = {});

}  // namespace fsad
