#include "shadow_att/moments.hpp"

#include <string>

#include "shadow_att/errors.hpp"

namespace shadow_att {

namespace {

double checked_pi(const PropensityModel& model, int y0, const VectorRef& u, const ThetaParams& theta) {
    const double p = model.probability(y0, u, theta);
    if (!(p <= kSaturationBound))
        throw NumericalBlowup("propensity saturated at y0 = " + std::to_string(y0));
    return p;
}

}  // namespace

DerivedMoments compute_moments(const VectorRef& u, double m0, std::optional<double> m1,
                               const ThetaParams& theta, std::optional<double> delta,
                               const PropensityModel& model) {
    const double pi0 = checked_pi(model, 0, u, theta);
    const double pi1 = checked_pi(model, 1, u, theta);
    const double inv0 = 1.0 / (1.0 - pi0);
    const double inv1 = 1.0 / (1.0 - pi1);

    DerivedMoments mo;
    mo.e0_inv = control_expectation(m0, inv0, inv1);
    mo.w = 1.0 - 1.0 / mo.e0_inv;
    mo.e0_pi = control_expectation(m0, pi0 * inv0 * inv0, pi1 * inv1 * inv1);
    mo.e0_dpi = (1.0 - m0) * inv0 * inv0 * model.gradient(0, u, theta) +
                m0 * inv1 * inv1 * model.gradient(1, u, theta);
    mo.e0_y0pi2 = m0 * pi1 * pi1 * inv1 * inv1;
    // 1 - w = 1 / e0_inv exactly; use that form to keep A and B accurate.
    const double one_minus_w = 1.0 / mo.e0_inv;
    mo.A = one_minus_w * mo.e0_dpi;
    mo.B = one_minus_w * mo.e0_pi;
    mo.e1_y1 = m1;
    if (m1 && delta) mo.V = mo.w * (*m1) - mo.w * (*delta) + one_minus_w * mo.e0_y0pi2;
    return mo;
}

DerivedMoments compute_moments(const VectorRef& u, const VectorRef& z, const ThetaParams& theta,
                               const NuisancePair& nuis, std::optional<double> delta,
                               const PropensityModel& model) {
    Eigen::VectorXd x(u.size() + z.size());
    x << u, z;
    const double m0 = nuis.p0.predict(x);
    std::optional<double> m1;
    if (nuis.p1) m1 = nuis.p1->predict(x);
    if (delta && !m1) throw PreconditionFailure("V(x) requires the treated-arm nuisance p1");
    return compute_moments(u, m0, m1, theta, delta, model);
}

double implied_outcome_probability(const VectorRef& u, double m0, const ThetaParams& theta,
                                   const PropensityModel& model) {
    const double pi0 = checked_pi(model, 0, u, theta);
    const double pi1 = checked_pi(model, 1, u, theta);
    const double e0_inv = control_expectation(m0, 1.0 / (1.0 - pi0), 1.0 / (1.0 - pi1));
    return m0 / (1.0 - pi1) / e0_inv;
}

Eigen::VectorXd q_summand(const VectorRef& u, double m0, const ThetaParams& theta,
                          const PropensityModel& model) {
    const double pi0 = checked_pi(model, 0, u, theta);
    const double pi1 = checked_pi(model, 1, u, theta);
    const double e0_inv = control_expectation(m0, 1.0 / (1.0 - pi0), 1.0 / (1.0 - pi1));
    const double inv1 = 1.0 / (1.0 - pi1);
    // (1 - w) E0[Y0 (1 - pi)^-2 dpi | x, 0]
    return (m0 * inv1 * inv1 / e0_inv) * model.gradient(1, u, theta);
}

}  // namespace shadow_att
