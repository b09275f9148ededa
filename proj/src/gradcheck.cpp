#include "sblab/gradcheck.hpp"

#include <cmath>
#include <unordered_set>

namespace sblab {

GradCheckResult grad_check(const LossBuilder& build,
                           const std::vector<std::pair<std::string, TensorPtr>>& params,
                           const GradCheckOptions& opts) {
    GradCheckResult res;

    Tape tape;
    TensorPtr loss = build(&tape);
    if (loss->numel() != 1) throw ShapeError("grad_check: loss must be scalar");
    if (!std::isfinite(loss->value[0])) {
        res.failure = "loss is non-finite at the evaluation point";
        return res;
    }
    tape.backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& [name, p] : params) {
        p->ensure_grad();
        analytic.push_back(p->grad);
        for (double g : p->grad) {
            if (!std::isfinite(g)) {
                res.failure = "analytic gradient of '" + name + "' is non-finite";
                return res;
            }
        }
    }

    auto eval = [&]() -> double { return build(nullptr)->value[0]; };

    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& [name, p] = params[pi];
        GradCheckResult::Entry entry;
        entry.name = name;

        std::vector<int64_t> elems;
        int64_t n = p->numel();
        if (opts.max_elems_per_param > 0 && n > opts.max_elems_per_param) {
            Rng rng(opts.subsample_seed, Stream::misc, pi);
            std::unordered_set<int64_t> seen;
            while (static_cast<int64_t>(seen.size()) < opts.max_elems_per_param) {
                seen.insert(static_cast<int64_t>(rng.integer(static_cast<uint64_t>(n))));
            }
            elems.assign(seen.begin(), seen.end());
        } else {
            elems.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) elems[static_cast<size_t>(i)] = i;
        }

        for (int64_t i : elems) {
            double saved = p->value[i];
            p->value[i] = saved + opts.eps;
            double fp = eval();
            p->value[i] = saved - opts.eps;
            double fm = eval();
            p->value[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                res.failure = "finite-difference probe of '" + name + "' hit a non-finite loss";
                return res;
            }
            double fd = (fp - fm) / (2.0 * opts.eps);
            double ad = analytic[pi][static_cast<size_t>(i)];
            double rel = std::abs(ad - fd) / std::max(1.0, std::abs(fd));
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
            ++entry.checked;
        }
        res.max_rel_err = std::max(res.max_rel_err, entry.max_rel_err);
        res.per_param.push_back(std::move(entry));
    }
    res.pass = res.failure.empty() && res.max_rel_err < opts.tol;
    return res;
}

}  // namespace sblab
