#pragma once

#include <cstddef>
#include <string>

#include <Eigen/Dense>

namespace shadow_att {

using VectorRef = Eigen::Ref<const Eigen::VectorXd>;

/// Propensity parameter theta = (intercept, coefficient on y0, coefficients on u).
class ThetaParams {
public:
    ThetaParams() = default;
    explicit ThetaParams(Eigen::VectorXd values);
    ThetaParams(std::initializer_list<double> values);

    static ThetaParams zeros(std::size_t p) { return ThetaParams(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p + 2))); }

    std::size_t dim() const noexcept { return static_cast<std::size_t>(values_.size()); }
    /// Number of non-shadow covariates the parameter is sized for.
    std::size_t covariate_dim() const noexcept { return dim() - 2; }

    double intercept() const { return values_[0]; }
    double outcome_coef() const { return values_[1]; }
    auto covariate_coefs() const { return values_.tail(values_.size() - 2); }

    const Eigen::VectorXd& values() const noexcept { return values_; }
    double operator[](std::size_t j) const { return values_[static_cast<Eigen::Index>(j)]; }

private:
    Eigen::VectorXd values_;
};

/// Numerically stable logistic function.
double expit(double x) noexcept;
double logit(double p);

/// Parametric treatment model pi(y0, u; theta) = pr(T = 1 | y0, u).
///
/// Everything downstream only needs pi and its theta-gradient, so another
/// family can be dropped in by implementing this interface.
class PropensityModel {
public:
    virtual ~PropensityModel() = default;
    virtual double probability(int y0, const VectorRef& u, const ThetaParams& theta) const = 0;
    virtual Eigen::VectorXd gradient(int y0, const VectorRef& u, const ThetaParams& theta) const = 0;
    virtual std::string name() const = 0;
};

/// expit(theta1 + theta2 * y0 + theta3' u)
class LogisticPropensity final : public PropensityModel {
public:
    double probability(int y0, const VectorRef& u, const ThetaParams& theta) const override;
    Eigen::VectorXd gradient(int y0, const VectorRef& u, const ThetaParams& theta) const override;
    std::string name() const override { return "logistic"; }

    static double linear_predictor(int y0, const VectorRef& u, const ThetaParams& theta);
};

const PropensityModel& logistic_propensity();

double pi(int y0, const VectorRef& u, const ThetaParams& theta);
Eigen::VectorXd pi_gradient(int y0, const VectorRef& u, const ThetaParams& theta);

}  // namespace shadow_att
