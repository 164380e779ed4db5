#include "shadow_att/propensity.hpp"

#include <cmath>

#include "shadow_att/errors.hpp"

namespace shadow_att {

ThetaParams::ThetaParams(Eigen::VectorXd values) : values_(std::move(values)) {
    if (values_.size() < 2) throw DimensionMismatch(2, static_cast<std::size_t>(values_.size()), "theta");
    if (!values_.allFinite()) throw Error("theta has non-finite entries");
}

ThetaParams::ThetaParams(std::initializer_list<double> values)
    : ThetaParams(Eigen::Map<const Eigen::VectorXd>(values.begin(), static_cast<Eigen::Index>(values.size()))) {}

double expit(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

double LogisticPropensity::linear_predictor(int y0, const VectorRef& u, const ThetaParams& theta) {
    if (u.size() + 2 != static_cast<Eigen::Index>(theta.dim()))
        throw DimensionMismatch(theta.dim() - 2, static_cast<std::size_t>(u.size()), "u");
    return theta.intercept() + theta.outcome_coef() * y0 + theta.covariate_coefs().dot(u);
}

double LogisticPropensity::probability(int y0, const VectorRef& u, const ThetaParams& theta) const {
    return expit(linear_predictor(y0, u, theta));
}

Eigen::VectorXd LogisticPropensity::gradient(int y0, const VectorRef& u, const ThetaParams& theta) const {
    const double p = probability(y0, u, theta);
    Eigen::VectorXd g(theta.values().size());
    g[0] = 1.0;
    g[1] = static_cast<double>(y0);
    g.tail(u.size()) = u;
    return p * (1.0 - p) * g;
}

const PropensityModel& logistic_propensity() {
    static const LogisticPropensity model;
    return model;
}

double pi(int y0, const VectorRef& u, const ThetaParams& theta) {
    return logistic_propensity().probability(y0, u, theta);
}

Eigen::VectorXd pi_gradient(int y0, const VectorRef& u, const ThetaParams& theta) {
    return logistic_propensity().gradient(y0, u, theta);
}

}  // namespace shadow_att
