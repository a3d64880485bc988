#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tgt/common.hpp"

namespace tgt {

inline double mae(const std::vector<double>& preds, const std::vector<double>& targets) {
    check(preds.size() == targets.size() && !preds.empty(), "mae: size mismatch or empty");
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(preds[i] - targets[i]);
    return s / static_cast<double>(preds.size());
}

// Fraction of predictions with absolute error within tau.
inline double ewt(const std::vector<double>& preds, const std::vector<double>& targets, double tau) {
    check(preds.size() == targets.size() && !preds.empty(), "ewt: size mismatch or empty");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (std::abs(preds[i] - targets[i]) <= tau) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

struct F1Result {
    std::int64_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

inline F1Result binary_f1(const std::vector<int>& preds, const std::vector<int>& labels) {
    check(preds.size() == labels.size(), "binary_f1: size mismatch");
    F1Result r;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == 1 && labels[i] == 1) ++r.tp;
        if (preds[i] == 1 && labels[i] == 0) ++r.fp;
        if (preds[i] == 0 && labels[i] == 1) ++r.fn;
    }
    r.precision = r.tp + r.fp > 0 ? static_cast<double>(r.tp) / (r.tp + r.fp) : 0.0;
    r.recall = r.tp + r.fn > 0 ? static_cast<double>(r.tp) / (r.tp + r.fn) : 0.0;
    r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                        : 0.0;
    return r;
}

// Ranks with ties averaged.
inline std::vector<double> fractional_ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

inline double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
    check(xs.size() == ys.size() && xs.size() >= 2, "spearman_rho: need >= 2 paired samples");
    const auto rx = fractional_ranks(xs);
    const auto ry = fractional_ranks(ys);
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

// Least-squares slope of y against x.
inline double regression_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    check(xs.size() == ys.size() && xs.size() >= 2, "regression_slope: need >= 2 points");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    check(sxx > 0.0, "regression_slope: degenerate x values");
    return sxy / sxx;
}

}  // namespace tgt
