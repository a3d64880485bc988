#pragma once

#include <cmath>
#include <vector>

#include "tgt/tape.hpp"

namespace tgt {

// ---- distance binning ----

struct BinSpec {
    int num_bins = 256;
    double range = 8.0;  // distances are clipped at this value

    double width() const { return range / num_bins; }
};

inline void validate(const BinSpec& spec) {
    check(spec.num_bins >= 2, "BinSpec: need at least 2 bins");
    check(spec.range > 0.0, "BinSpec: range must be positive");
}

inline int bin_distance(double d, const BinSpec& spec) {
    const int idx = static_cast<int>(std::floor(d * spec.num_bins / spec.range));
    return std::min(std::max(idx, 0), spec.num_bins - 1);
}

inline double bin_center(int index, const BinSpec& spec) {
    return (index + 0.5) * spec.range / spec.num_bins;
}

// ---- RBF distance encoding ----
//
// Per kernel k: o^k = exp(-((m^k*d + b^k - mu^k) / |s^k|)^2 / 2) / (sqrt(2*pi)*|s^k|)
// with m^k, b^k looked up per pair type; kernels concatenate into a 2-layer MLP.
template <typename Real>
struct RbfVars {
    using V = typename Tape<Real>::Var;
    V mu;      // [K]
    V sigma;   // [K]
    V m_tab;   // [num_pair_types, K]
    V b_tab;   // [num_pair_types, K]
    V w1, b1;  // [K, hidden], [hidden]
    V w2, b2;  // [hidden, out], [out]
};

inline constexpr double kSigmaClampMin = 1e-4;  // |sigma| floor; avoids division blowup

// Raw kernel responses for a flat distance vector. `d` has shape [M] and
// pair_types index the m/b embedding tables; result is [M, K].
template <typename Real>
typename Tape<Real>::Var rbf_kernels(Tape<Real>& t, typename Tape<Real>::Var d,
                                     const std::vector<std::int64_t>& pair_types,
                                     const RbfVars<Real>& p) {
    const std::int64_t m_count = t.val(d).size();
    check(static_cast<std::int64_t>(pair_types.size()) == m_count,
          "rbf_kernels: pair type count mismatch");
    auto mv = t.embedding(p.m_tab, pair_types, Shape{m_count});  // [M,K]
    auto bv = t.embedding(p.b_tab, pair_types, Shape{m_count});  // [M,K]
    auto d_col = t.reshape(d, Shape{m_count, 1});
    auto abs_sigma = t.clamp_min(t.abs_(p.sigma), Real(kSigmaClampMin));  // [K]
    auto z = t.div(t.sub(t.add(t.mul(mv, d_col), bv), p.mu), abs_sigma);
    auto gauss = t.exp_(t.mul_scalar(t.mul(z, z), Real(-0.5)));
    const Real inv_sqrt_2pi = Real(0.3989422804014326779);
    auto coeff = t.div(t.scalar(inv_sqrt_2pi), abs_sigma);  // [K] broadcast over rows
    return t.mul(gauss, coeff);
}

template <typename Real>
typename Tape<Real>::Var rbf_encode(Tape<Real>& t, typename Tape<Real>::Var d,
                                    const std::vector<std::int64_t>& pair_types,
                                    const RbfVars<Real>& p) {
    auto k = rbf_kernels(t, d, pair_types, p);
    auto h = t.gelu(t.add(t.matmul(k, p.w1), p.b1));
    return t.add(t.matmul(h, p.w2), p.b2);
}

// ---- Fourier distance encoding ----
//
// Wavelengths are fixed, log-spaced on [2*delta_min, 2*delta_max]; features
// [sin, cos] per kernel feed one linear layer.
template <typename Real>
struct FourierVars {
    using V = typename Tape<Real>::Var;
    V w, b;  // [2K, out], [out]
};

inline std::vector<double> fourier_wavelengths(int kernels, double delta_min, double delta_max) {
    check(kernels >= 1, "fourier_wavelengths: need at least one kernel");
    check(delta_min > 0.0 && delta_max > delta_min, "fourier_wavelengths: need 0 < delta_min < delta_max");
    std::vector<double> lambdas(static_cast<std::size_t>(kernels));
    const double lo = std::log(2.0 * delta_min), hi = std::log(2.0 * delta_max);
    for (int k = 0; k < kernels; ++k) {
        const double f = kernels == 1 ? 0.0 : static_cast<double>(k) / (kernels - 1);
        lambdas[static_cast<std::size_t>(k)] = std::exp(lo + f * (hi - lo));
    }
    return lambdas;
}

// [M] distances -> [M, 2K] features: [sin(phi_1..K), cos(phi_1..K)], phi = 2*pi*d/lambda.
template <typename Real>
typename Tape<Real>::Var fourier_features(Tape<Real>& t, typename Tape<Real>::Var d,
                                          const std::vector<double>& lambdas) {
    const std::int64_t m_count = t.val(d).size();
    const std::int64_t k = static_cast<std::int64_t>(lambdas.size());
    Tensor<Real> freq(Shape{k});
    for (std::int64_t i = 0; i < k; ++i) {
        freq[i] = Real(2.0 * M_PI / lambdas[static_cast<std::size_t>(i)]);
    }
    auto phi = t.mul(t.reshape(d, Shape{m_count, 1}), t.constant(std::move(freq)));  // [M,K]
    return t.concat({t.sin_(phi), t.cos_(phi)}, 1);
}

template <typename Real>
typename Tape<Real>::Var fourier_encode(Tape<Real>& t, typename Tape<Real>::Var d,
                                        const std::vector<double>& lambdas,
                                        const FourierVars<Real>& p) {
    return t.add(t.matmul(fourier_features(t, d, lambdas), p.w), p.b);
}

}  // namespace tgt
