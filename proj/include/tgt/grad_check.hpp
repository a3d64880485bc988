#pragma once

#include <cmath>
#include <vector>

#include "tgt/tape.hpp"

namespace tgt {

// Central-finite-difference gradient verification. The builder constructs a
// scalar loss from leaf variables on a fresh tape; it must be deterministic
// (any stochastic masks fixed by the caller beforehand).
//
// Returns max over all coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|).
template <typename Builder>
double grad_check_multi(Builder&& build, const std::vector<Tensor<double>>& points,
                        double step = 1e-6) {
    auto eval = [&](const std::vector<Tensor<double>>& pts, bool with_grad,
                    std::vector<Tensor<double>>* grads_out) -> double {
        Tape<double> tape;
        std::vector<typename Tape<double>::Var> leaves;
        leaves.reserve(pts.size());
        for (const auto& p : pts) leaves.push_back(tape.leaf(p, with_grad));
        auto loss = build(tape, leaves);
        const double value = tape.val(loss)[0];
        if (!std::isfinite(value)) throw NumericError("grad_check: non-finite forward value");
        if (with_grad) {
            tape.backward(loss);
            grads_out->clear();
            for (auto v : leaves) grads_out->push_back(tape.grad(v));
        }
        return value;
    };

    std::vector<Tensor<double>> analytic;
    eval(points, true, &analytic);

    std::vector<Tensor<double>> work = points;
    double max_err = 0.0;
    for (std::size_t t = 0; t < work.size(); ++t) {
        for (std::int64_t i = 0; i < work[t].size(); ++i) {
            const double orig = work[t][i];
            work[t][i] = orig + step;
            const double fp = eval(work, false, nullptr);
            work[t][i] = orig - step;
            const double fm = eval(work, false, nullptr);
            work[t][i] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double ga = analytic[t][i];
            const double err = std::abs(ga - numeric) /
                               std::max({1.0, std::abs(ga), std::abs(numeric)});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

// Single-tensor convenience used by most layer-level checks.
template <typename Builder>
double grad_check(Builder&& build, const Tensor<double>& point, double step = 1e-6) {
    return grad_check_multi(
        [&](Tape<double>& tape, const std::vector<typename Tape<double>::Var>& leaves) {
            return build(tape, leaves[0]);
        },
        std::vector<Tensor<double>>{point}, step);
}

}  // namespace tgt
