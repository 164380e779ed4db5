#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace shadow_att {

struct SolverOptions {
    int max_iter = 100;
    /// Stop when the accepted step is below this in max-norm.
    double step_tol = 1e-10;
    /// Converged when the mean estimating function is below this in max-norm.
    double residual_tol = 1e-8;
    /// Central finite-difference step for the Jacobian.
    double fd_step = 1e-6;
    /// Halvings of the Newton step allowed per iteration.
    int max_halvings = 30;
    /// Start vector; zeros when unset.
    std::optional<Eigen::VectorXd> init;
    /// Try several starts (two data-driven ones, then zeros) until one is accepted.
    bool multi_start = true;
    /// Roots with any |component| above this are rejected as saturated: the
    /// mean score can vanish asymptotically as coefficients diverge.
    double max_abs = 10.0;
    /// Free components; the others stay at their start values and their
    /// equations are dropped. All components when empty.
    std::vector<std::size_t> active;

    void validate() const;
};

struct RootResult {
    Eigen::VectorXd x;
    double residual = 0.0;  ///< max-norm of the (active) mean estimating function at x
    int iterations = 0;
    bool converged = false;
    std::string start;      ///< label of the start that produced x
};

using EstimatingFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Central-difference Jacobian of f at x.
Eigen::MatrixXd fd_jacobian(const EstimatingFunction& f, const Eigen::VectorXd& x, double step);

/// Damped Newton iteration with a finite-difference Jacobian and step
/// halving on the residual 2-norm. Evaluations that throw NumericalBlowup or
/// return non-finite values count as rejected trial points.
///
/// Returns the last iterate with converged = false when the iteration stalls
/// or runs out of iterations; throws SingularJacobian when the Jacobian
/// vanishes or stays singular after a 1e-8 ridge.
RootResult damped_newton(const EstimatingFunction& f, const Eigen::VectorXd& x0,
                         const SolverOptions& opts, const std::string& start_label = "zero");

}  // namespace shadow_att
