#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fsad/params.hpp"

namespace fsad {

struct GradcheckOptions {
    double step = 1e-6;              // central-difference step
    std::size_t coords_per_tensor = 8;
    double abs_floor = 1e-6;         // denominator floor for near-zero gradients
    std::uint64_t seed = 0;
};

struct GradcheckResult {
    double max_rel_error = 0;
    std::size_t coords_checked = 0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0;
    double worst_numeric = 0;
};

// Central differences (f(p+h) - f(p-h)) / 2h on a sampled subset of
// coordinates, compared against `analytic`. Relative error per coordinate is
// |a - n| / max(|a|, |n|, abs_floor). The objective must be a pure function
// of the parameters; frozen entries are skipped. A mismatch between two evaluations at the same point
// raises OracleError.
template <typename U>
GradcheckResult finite_difference_gradcheck(const std::function<double(const ParameterSet<U>&)>& objective, const ParameterSet<U>& params,
                                            const std::vector<Tensor<double>>& analytic, const GradcheckOptions& opt = {}) {
    if (analytic.size() != params.size()) fail(ErrorKind::ShapeError, "gradcheck: gradient count does not match parameter count");
    const double base_a = objective(params);
    const double base_b = objective(params);
    if (!(base_a == base_b)) fail(ErrorKind::OracleError, "objective is not deterministic under frozen randomness");

    GradcheckResult res;
    Rng rng = Rng(opt.seed).split("gradcheck");
    ParameterSet<U> probe = params;
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (params.frozen(t)) continue;
        if (analytic[t].size() != params[t].size()) fail(ErrorKind::ShapeError, "gradcheck: gradient shape for " + params.name(t));
        const std::size_t n = params[t].size();
        for (std::size_t idx : rng.choose(n, std::min(n, opt.coords_per_tensor))) {
            const U orig = params[t][idx];
            probe[t][idx] = static_cast<U>(static_cast<double>(orig) + opt.step);
            const double up = objective(probe);
            const double h_up = static_cast<double>(probe[t][idx]) - static_cast<double>(orig);
            probe[t][idx] = static_cast<U>(static_cast<double>(orig) - opt.step);
            const double down = objective(probe);
            const double h_down = static_cast<double>(orig) - static_cast<double>(probe[t][idx]);
            probe[t][idx] = orig;
            const double numeric = (up - down) / (h_up + h_down);
            const double a = analytic[t][idx];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.abs_floor});
            ++res.coords_checked;
            if (res.worst_param.empty() || rel > res.max_rel_error) {
                res.max_rel_error = rel;
                res.worst_param = params.name(t);
                res.worst_index = idx;
                res.worst_analytic = a;
                res.worst_numeric = numeric;
            }
        }
    }
    return res;
}

}  // namespace fsad
