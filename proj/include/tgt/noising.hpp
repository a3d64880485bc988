#pragma once

#include <cmath>
#include <vector>

#include "tgt/common.hpp"
#include "tgt/rng.hpp"

namespace tgt {

struct NoiseConfig {
    double sigma = 0.2;  // per-atom noise std
    double nu = 1.0;     // smoothing length scale
};

inline void validate(const NoiseConfig& c) {
    check(c.sigma >= 0.0, "noise: sigma must be >= 0");
    check(c.nu > 0.0, "noise: nu must be > 0");
}

// Displacement field of the locally smoothed noise:
//   disp_i = sum_j exp(-|r_i - r_j| / nu) u_j,   u_j ~ N(0, sigma^2 I)
// Depends on coordinates only through pairwise differences, so it is
// translation-equivariant. The j == i term contributes u_i itself, so
// nu -> 0 recovers i.i.d. Gaussian displacements while nu -> infinity
// approaches a rigid translation.
inline std::vector<double> smooth_displacement(const std::vector<double>& coords, int n, int dim,
                                               const NoiseConfig& cfg, Rng& rng) {
    validate(cfg);
    check(static_cast<std::size_t>(n) * dim == coords.size(),
          "smooth_displacement: coords size mismatch");
    std::vector<double> u(coords.size());
    for (auto& x : u) x = rng.normal(0.0, cfg.sigma);
    std::vector<double> disp(coords.size(), 0.0);
    if (cfg.sigma == 0.0) return disp;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double d2 = 0.0;
            for (int c = 0; c < dim; ++c) {
                const double diff = coords[static_cast<std::size_t>(i) * dim + c] -
                                    coords[static_cast<std::size_t>(j) * dim + c];
                d2 += diff * diff;
            }
            const double w = std::exp(-std::sqrt(d2) / cfg.nu);
            for (int c = 0; c < dim; ++c) {
                disp[static_cast<std::size_t>(i) * dim + c] += w * u[static_cast<std::size_t>(j) * dim + c];
            }
        }
    }
    return disp;
}

// r_i' = r_i + disp_i
inline std::vector<double> smooth_noise(const std::vector<double>& coords, int n, int dim,
                                        const NoiseConfig& cfg, Rng& rng) {
    auto out = coords;
    const auto disp = smooth_displacement(coords, n, dim, cfg, rng);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += disp[i];
    return out;
}

}  // namespace tgt
