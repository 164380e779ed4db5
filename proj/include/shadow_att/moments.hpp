#pragma once

#include <optional>

#include <Eigen/Dense>

#include "shadow_att/nuisance.hpp"
#include "shadow_att/propensity.hpp"

namespace shadow_att {

/// pi above this bound makes (1 - pi)^{-1} unusable.
inline constexpr double kSaturationBound = 1.0 - 1e-10;

/// Conditional moments at one x for binary Y0. "e0_" fields are expectations
/// under the control-arm law f0(y0 | x, T = 0).
struct DerivedMoments {
    double w = 0.0;         ///< pr(T = 1 | x)
    Eigen::VectorXd A;      ///< (1 - w) e0_dpi
    double B = 0.0;         ///< (1 - w) e0_pi
    double e0_inv = 0.0;    ///< E0[(1 - pi)^-1 | x, 0]
    double e0_pi = 0.0;     ///< E0[pi (1 - pi)^-2 | x, 0]
    Eigen::VectorXd e0_dpi; ///< E0[dpi (1 - pi)^-2 | x, 0]
    double e0_y0pi2 = 0.0;  ///< E0[Y0 pi^2 (1 - pi)^-2 | x, 0]
    std::optional<double> e1_y1;  ///< E1(Y1 | x, 1) when p1 is available
    std::optional<double> V;      ///< w e1 - w delta + (1 - w) e0_y0pi2 when delta is given
};

/// E0[g(Y0) | x, 0] for binary Y0 with P(Y0 = 1 | x, 0) = m0.
inline double control_expectation(double m0, double g_at_0, double g_at_1) noexcept {
    return g_at_1 * m0 + g_at_0 * (1.0 - m0);
}

/// Closed-form moments given the control-arm mean m0 (and optionally the
/// treated-arm mean m1). V is filled only when both m1 and delta are given.
DerivedMoments compute_moments(const VectorRef& u, double m0, std::optional<double> m1,
                               const ThetaParams& theta, std::optional<double> delta = std::nullopt,
                               const PropensityModel& model = logistic_propensity());

/// Same, evaluating the nuisance pair at x = (u, z).
DerivedMoments compute_moments(const VectorRef& u, const VectorRef& z, const ThetaParams& theta,
                               const NuisancePair& nuis, std::optional<double> delta = std::nullopt,
                               const PropensityModel& model = logistic_propensity());

/// P(Y0 = 1 | x) under the unconditional law implied by m0, theta and w.
double implied_outcome_probability(const VectorRef& u, double m0, const ThetaParams& theta,
                                   const PropensityModel& model = logistic_propensity());

/// E0[Y0 (1 - pi)^-1 dpi | x], the per-x summand of Q.
Eigen::VectorXd q_summand(const VectorRef& u, double m0, const ThetaParams& theta,
                          const PropensityModel& model = logistic_propensity());

}  // namespace shadow_att
