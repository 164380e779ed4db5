#include "shadow_att/scores.hpp"

#include "shadow_att/errors.hpp"

namespace shadow_att {

double treated_factor(int t, int y, const VectorRef& u, const ThetaParams& theta,
                      const PropensityModel& model) {
    if (t == 1) return 1.0;
    const double p = model.probability(y, u, theta);
    if (!(p <= kSaturationBound)) throw NumericalBlowup("propensity saturated on a control row");
    return -p / (1.0 - p);
}

Eigen::VectorXd s_eff_from(double factor, const DerivedMoments& m) {
    return (factor / m.e0_pi) * m.e0_dpi;
}

double phi_from(int t, int y, double factor, const DerivedMoments& m, double delta, double p_hat) {
    if (!m.e1_y1) throw PreconditionFailure("phi requires the treated-arm nuisance p1");
    const double augment = (m.w * (*m.e1_y1) + (1.0 - m.w) * m.e0_y0pi2) / m.B;
    return (factor * y - factor * augment - delta * (t - factor * m.w / m.B)) / p_hat;
}

double phi_alt_from(int t, int y, double factor, double delta, double p_hat) {
    return (factor * y - t * delta) / p_hat;
}

double projection_residual_from(double factor, const DerivedMoments& m, double p_hat) {
    if (!m.V) throw PreconditionFailure("projection residual requires V(x)");
    return factor * (*m.V) / (p_hat * m.B);
}

namespace {

DerivedMoments moments_at(const Observation& obs, const ScoreContext& ctx, bool with_delta) {
    return compute_moments(obs.u, obs.z, ctx.theta, ctx.nuis,
                           with_delta ? std::optional<double>(ctx.delta) : std::nullopt, *ctx.model);
}

}  // namespace

Eigen::VectorXd s_eff(const Observation& obs, const ScoreContext& ctx) {
    const auto m = moments_at(obs, ctx, false);
    return s_eff_from(treated_factor(obs.t, obs.y, obs.u, ctx.theta, *ctx.model), m);
}

double phi(const Observation& obs, const ScoreContext& ctx) {
    const auto m = moments_at(obs, ctx, false);
    return phi_from(obs.t, obs.y, treated_factor(obs.t, obs.y, obs.u, ctx.theta, *ctx.model), m,
                    ctx.delta, ctx.p_hat);
}

double phi_alt(const Observation& obs, const ScoreContext& ctx) {
    return phi_alt_from(obs.t, obs.y, treated_factor(obs.t, obs.y, obs.u, ctx.theta, *ctx.model),
                        ctx.delta, ctx.p_hat);
}

double phi_eff(const Observation& obs, const ScoreContext& ctx) {
    if (!ctx.H) throw MissingH();
    const auto m = moments_at(obs, ctx, false);
    const double f = treated_factor(obs.t, obs.y, obs.u, ctx.theta, *ctx.model);
    return phi_from(obs.t, obs.y, f, m, ctx.delta, ctx.p_hat) + ctx.H->dot(s_eff_from(f, m));
}

double phi_projection_residual(const Observation& obs, const ScoreContext& ctx) {
    const auto m = moments_at(obs, ctx, true);
    return projection_residual_from(treated_factor(obs.t, obs.y, obs.u, ctx.theta, *ctx.model), m,
                                    ctx.p_hat);
}

}  // namespace shadow_att
