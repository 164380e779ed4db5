#include <cmath>

#include "doctest.h"
#include "shadow_att/errors.hpp"
#include "shadow_att/solver.hpp"

using namespace shadow_att;

TEST_CASE("central-difference Jacobian of a smooth map") {
    const EstimatingFunction f = [](const Eigen::VectorXd& x) {
        return Eigen::Vector2d(x[0] * x[0] + x[1], std::sin(x[0]) * x[1]).eval();
    };
    const Eigen::Vector2d x(0.7, -1.2);
    const Eigen::MatrixXd J = fd_jacobian(f, x, 1e-6);
    CHECK(J(0, 0) == doctest::Approx(1.4).epsilon(1e-8));
    CHECK(J(0, 1) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(J(1, 0) == doctest::Approx(std::cos(0.7) * -1.2).epsilon(1e-8));
    CHECK(J(1, 1) == doctest::Approx(std::sin(0.7)).epsilon(1e-8));
}

TEST_CASE("damped Newton reaches a certified root") {
    const EstimatingFunction f = [](const Eigen::VectorXd& x) {
        return Eigen::Vector2d(std::exp(x[0]) - 2.0, x[0] + x[1] * x[1] * x[1] - 1.0).eval();
    };
    SolverOptions opts;
    const auto r = damped_newton(f, Eigen::Vector2d(3.0, 3.0), opts);
    REQUIRE(r.converged);
    CHECK(f(r.x).cwiseAbs().maxCoeff() <= opts.residual_tol);
    CHECK(r.residual == doctest::Approx(f(r.x).cwiseAbs().maxCoeff()));
    CHECK(r.x[0] == doctest::Approx(std::log(2.0)).epsilon(1e-10));
    CHECK(r.x[1] == doctest::Approx(std::cbrt(1.0 - std::log(2.0))).epsilon(1e-8));
}

TEST_CASE("rejected trial points are halved away") {
    // Evaluations beyond x = 2 throw; Newton from 0 on x - 5 + 4 exp(-x) overshoots.
    const EstimatingFunction f = [](const Eigen::VectorXd& x) {
        if (x[0] > 2.0) throw NumericalBlowup("out of domain");
        return Eigen::VectorXd::Constant(1, std::atan(x[0] - 1.0));
    };
    const auto r = damped_newton(f, Eigen::VectorXd::Constant(1, -4.0), SolverOptions{});
    REQUIRE(r.converged);
    CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("a function without a root is reported as not converged") {
    const EstimatingFunction f = [](const Eigen::VectorXd& x) {
        return Eigen::VectorXd::Constant(1, x[0] * x[0] + 1.0);
    };
    const auto r = damped_newton(f, Eigen::VectorXd::Constant(1, 0.5), SolverOptions{});
    CHECK_FALSE(r.converged);
    CHECK(r.residual >= 1.0);
}

TEST_CASE("a constant map has a singular Jacobian") {
    const EstimatingFunction f = [](const Eigen::VectorXd&) { return Eigen::Vector2d(1.0, 1.0).eval(); };
    CHECK_THROWS_AS(damped_newton(f, Eigen::Vector2d(0, 0), SolverOptions{}), SingularJacobian);
}

TEST_CASE("active subsets fix the other components at their start values") {
    const EstimatingFunction f = [](const Eigen::VectorXd& x) {
        return Eigen::Vector3d(x[0] - 2.0 * x[1], 99.0, x[2] + x[1]).eval();
    };
    SolverOptions opts;
    opts.active = {0, 2};
    const auto r = damped_newton(f, Eigen::Vector3d(0.0, 1.5, 0.0), opts);
    REQUIRE(r.converged);
    CHECK(r.x[1] == 1.5);
    CHECK(r.x[0] == doctest::Approx(3.0));
    CHECK(r.x[2] == doctest::Approx(-1.5));
}

TEST_CASE("option validation") {
    SolverOptions o;
    o.max_iter = 0;
    CHECK_THROWS_AS(o.validate(), ConfigError);
    o = SolverOptions{};
    o.residual_tol = -1;
    CHECK_THROWS_AS(o.validate(), ConfigError);
}
