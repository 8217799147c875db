#pragma once

// Finite-difference verification of analytic gradients. Runs in double; the
// caller supplies the scalar function and its analytic gradient, evaluated at
// the same point. Central differences with h=1e-5 on a random subset of
// coordinates; coordinates sitting on a kink (detected by disagreeing
// one-sided differences) are excluded.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "arn/rng.hpp"
#include "arn/tensor.hpp"

namespace arn {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::int64_t checked = 0;
    std::int64_t excluded = 0;
    std::int64_t worst_index = -1;
    bool pass = false;
    std::string note;
};

struct GradCheckOptions {
    double h = 1e-5;
    double tolerance = 1e-3;
    std::int64_t max_coords = 512;
    std::uint64_t seed = 7;
};

// f: scalar function of a flat coordinate vector (the caller owns how the
// vector maps onto tensors/parameters). analytic: gradient at the base point.
inline GradCheckReport gradcheck(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> point, const std::vector<double>& analytic,
                                 const GradCheckOptions& opt = {}) {
    GradCheckReport rep;
    const std::int64_t n = static_cast<std::int64_t>(point.size());
    for (std::int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(analytic[static_cast<std::size_t>(i)])) {
            rep.pass = false;
            rep.worst_index = i;
            rep.note = "non-finite analytic gradient at coordinate " + std::to_string(i);
            rep.max_rel_err = std::numeric_limits<double>::infinity();
            return rep;
        }
    }

    std::vector<std::int64_t> coords(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    if (n > opt.max_coords) {
        SeededRng rng(opt.seed);
        rng.shuffle(coords);
        coords.resize(static_cast<std::size_t>(opt.max_coords));
    }

    const double f0 = f(point);
    for (std::int64_t idx : coords) {
        const std::size_t i = static_cast<std::size_t>(idx);
        const double saved = point[i];
        point[i] = saved + opt.h;
        const double fp = f(point);
        point[i] = saved - opt.h;
        const double fm = f(point);
        point[i] = saved;

        const double fwd = (fp - f0) / opt.h;
        const double bwd = (f0 - fm) / opt.h;
        // Exclusion looks only at the two one-sided numeric slopes: for a C2
        // function they agree to O(h); a visible disagreement means the step
        // straddles a kink (relu/leaky-relu/clamp) and central differences
        // are meaningless there. Comparing numerics only keeps the test
        // honest: a wrong analytic gradient at a smooth point cannot be
        // excluded by this rule.
        const double disagree = std::abs(fwd - bwd);
        if (disagree > 1e-9 && disagree > 1e-3 * std::max(std::abs(fwd), std::abs(bwd))) {
            ++rep.excluded;
            continue;
        }
        const double numeric = (fp - fm) / (2.0 * opt.h);
        const double a = analytic[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
        const double rel = std::abs(a - numeric) / denom;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_index = idx;
        }
        ++rep.checked;
    }
    rep.pass = rep.max_rel_err < opt.tolerance;
    return rep;
}

}  // namespace arn
