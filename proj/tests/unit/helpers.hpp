#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "shadow_att/data.hpp"
#include "shadow_att/nuisance.hpp"
#include "shadow_att/propensity.hpp"
#include "shadow_att/simulation.hpp"

namespace testing {

using namespace shadow_att;

// Closed-form logistic, written out independently of the library.
inline double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// True E0(Y0 | x, T = 0) under the simulation design: Bayes' rule on
// pr(Y0 = 1 | x) = expit(x2) and pr(T = 0 | y0, x1).
inline double true_m0(double x1, double x2, const Eigen::Vector3d& th) {
    const double q = logistic(x2);
    const double stay1 = 1.0 - logistic(th[0] + th[1] + th[2] * x1);
    const double stay0 = 1.0 - logistic(th[0] + th[2] * x1);
    return q * stay1 / (q * stay1 + (1.0 - q) * stay0);
}

inline NuisancePair true_nuisances(const Eigen::Vector3d& th) {
    auto p0 = ConditionalMeanModel::from_function(Arm::control, 2, [th](const VectorRef& x) {
        return true_m0(x[0], x[1], th);
    });
    auto p1 = ConditionalMeanModel::from_function(Arm::treated, 2, [](const VectorRef& x) { return logistic(x[0]); });
    return {p0, p1};
}

inline Dataset simulate(std::size_t n, std::uint64_t seed, ThetaParams theta = {0.3, -0.3, -0.25}) {
    DgpSpec spec;
    spec.n = n;
    spec.seed = seed;
    spec.theta0 = theta;
    return generate(spec).data;
}

inline Observation obs(int t, int y, double u, double z) {
    Observation o;
    o.t = t;
    o.y = y;
    o.u = Eigen::VectorXd::Constant(1, u);
    o.z = Eigen::VectorXd::Constant(1, z);
    return o;
}

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    const double var = ss / static_cast<double>(v.size() - 1);
    return {m, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace testing
