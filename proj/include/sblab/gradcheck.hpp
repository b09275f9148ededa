#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sblab/tensor.hpp"

namespace sblab {

// Builds the scalar loss from scratch. With a tape the graph is recorded for
// backward; with nullptr it is a pure forward evaluation (used for the
// finite-difference probes).
using LossBuilder = std::function<TensorPtr(Tape*)>;

struct GradCheckOptions {
    double eps = 1e-5;    // central-difference step
    double tol = 1e-6;    // max allowed relative error
    int64_t max_elems_per_param = 0;  // 0 = check every element
    uint64_t subsample_seed = 17;     // element subsampling when capped
};

struct GradCheckResult {
    struct Entry {
        std::string name;
        double max_rel_err = 0.0;
        int64_t checked = 0;
    };
    std::vector<Entry> per_param;
    double max_rel_err = 0.0;
    bool pass = false;
    std::string failure;  // set when a non-finite value was hit
};

// Compares reverse-mode gradients of `build` against central differences for
// every listed parameter. Relative error per element is
// |ad - fd| / max(1, |fd|). Any non-finite loss or gradient fails the check
// with the offending parameter named.
GradCheckResult grad_check(const LossBuilder& build,
                           const std::vector<std::pair<std::string, TensorPtr>>& params,
                           const GradCheckOptions& opts = {});

}  // namespace sblab
