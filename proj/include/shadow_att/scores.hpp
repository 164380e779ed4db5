#pragma once

#include <optional>

#include <Eigen/Dense>

#include "shadow_att/data.hpp"
#include "shadow_att/moments.hpp"
#include "shadow_att/nuisance.hpp"
#include "shadow_att/propensity.hpp"

namespace shadow_att {

struct ScoreContext {
    ThetaParams theta;
    double delta = 0.0;
    /// Sample treated fraction, in (0, 1).
    double p_hat = 0.5;
    NuisancePair nuis;
    /// Efficient-influence weight vector, p^-1 M^-1 (D - Q).
    std::optional<Eigen::VectorXd> H;
    const PropensityModel* model = &logistic_propensity();
};

/// (t - pi) / (1 - pi) with pi = pi(y0, u; theta). Treated rows give exactly 1
/// whatever y0 is; control rows observe y0 = y and give -pi / (1 - pi).
double treated_factor(int t, int y, const VectorRef& u, const ThetaParams& theta,
                      const PropensityModel& model = logistic_propensity());

// Row-level forms on precomputed moments; `factor` is treated_factor(...).
Eigen::VectorXd s_eff_from(double factor, const DerivedMoments& m);
double phi_from(int t, int y, double factor, const DerivedMoments& m, double delta, double p_hat);
double phi_alt_from(int t, int y, double factor, double delta, double p_hat);
/// factor * p^-1 * B^-1 * V; requires m.V.
double projection_residual_from(double factor, const DerivedMoments& m, double p_hat);

/// Efficient score for theta at one observation.
Eigen::VectorXd s_eff(const Observation& obs, const ScoreContext& ctx);
/// Influence function phi (the Lambda component of the efficient one).
double phi(const Observation& obs, const ScoreContext& ctx);
double phi_alt(const Observation& obs, const ScoreContext& ctx);
/// phi + H' S_eff; throws MissingH without ctx.H.
double phi_eff(const Observation& obs, const ScoreContext& ctx);
/// Lambda-perp part of phi_alt: phi_alt = phi + residual.
double phi_projection_residual(const Observation& obs, const ScoreContext& ctx);

}  // namespace shadow_att
