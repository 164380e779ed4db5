#include "shadow_att/solver.hpp"

#include <cmath>
#include <limits>

#include "shadow_att/errors.hpp"

namespace shadow_att {

void SolverOptions::validate() const {
    if (max_iter < 1) throw ConfigError("solver max_iter must be >= 1");
    if (!(step_tol > 0.0) || !(residual_tol > 0.0) || !(fd_step > 0.0))
        throw ConfigError("solver tolerances must be positive");
    if (max_halvings < 0) throw ConfigError("solver max_halvings must be >= 0");
    if (!(max_abs > 0.0)) throw ConfigError("solver max_abs must be positive");
}

Eigen::MatrixXd fd_jacobian(const EstimatingFunction& f, const Eigen::VectorXd& x, double step) {
    const Eigen::Index d = x.size();
    Eigen::MatrixXd jac;
    Eigen::VectorXd xp = x, xm = x;
    for (Eigen::Index j = 0; j < d; ++j) {
        xp[j] = x[j] + step;
        xm[j] = x[j] - step;
        const Eigen::VectorXd col = (f(xp) - f(xm)) / (2.0 * step);
        if (jac.size() == 0) jac.resize(col.size(), d);
        jac.col(j) = col;
        xp[j] = xm[j] = x[j];
    }
    return jac;
}

namespace {

constexpr double kRidge = 1e-8;
constexpr double kRankTol = 1e-13;

/// f(x), or nullopt when x is outside the usable region.
std::optional<Eigen::VectorXd> try_eval(const EstimatingFunction& f, const Eigen::VectorXd& x) {
    try {
        Eigen::VectorXd r = f(x);
        if (!r.allFinite()) return std::nullopt;
        return r;
    } catch (const NumericalBlowup&) {
        return std::nullopt;
    }
}

bool well_conditioned(const Eigen::JacobiSVD<Eigen::MatrixXd>& svd) {
    const auto& s = svd.singularValues();
    return s.size() > 0 && s.minCoeff() > kRankTol * std::max(1.0, s.maxCoeff());
}

Eigen::VectorXd newton_direction(const Eigen::MatrixXd& jac, const Eigen::VectorXd& r) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (!jac.allFinite()) throw SingularJacobian("Jacobian has non-finite entries");
    if (well_conditioned(svd)) return svd.solve(-r);
    if (!(svd.singularValues().maxCoeff() > kRankTol)) throw SingularJacobian("Jacobian vanishes");
    const Eigen::MatrixXd ridged = jac + kRidge * Eigen::MatrixXd::Identity(jac.rows(), jac.cols());
    Eigen::JacobiSVD<Eigen::MatrixXd> svd2(ridged, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (!well_conditioned(svd2)) throw SingularJacobian("Jacobian singular after ridge fallback");
    return svd2.solve(-r);
}

RootResult solve_full(const EstimatingFunction& f, const Eigen::VectorXd& x0, const SolverOptions& opts,
                      const std::string& label) {
    RootResult res;
    res.start = label;
    res.x = x0;
    auto r0 = try_eval(f, x0);
    if (!r0) {
        res.residual = std::numeric_limits<double>::infinity();
        return res;
    }
    Eigen::VectorXd r = *r0;
    res.residual = r.cwiseAbs().maxCoeff();
    for (int it = 0; it < opts.max_iter; ++it) {
        if (res.residual <= opts.residual_tol) {
            res.converged = true;
            return res;
        }
        res.iterations = it + 1;
        Eigen::MatrixXd jac;
        try {
            jac = fd_jacobian(f, res.x, opts.fd_step);
        } catch (const NumericalBlowup&) {
            return res;  // sitting on the edge of the usable region
        }
        const Eigen::VectorXd dir = newton_direction(jac, r);
        const double norm = r.norm();
        double lambda = 1.0;
        bool accepted = false;
        for (int h = 0; h <= opts.max_halvings; ++h, lambda *= 0.5) {
            const Eigen::VectorXd trial = res.x + lambda * dir;
            auto rt = try_eval(f, trial);
            if (rt && rt->norm() < norm) {
                res.x = trial;
                r = *rt;
                accepted = true;
                break;
            }
        }
        if (!accepted) return res;
        res.residual = r.cwiseAbs().maxCoeff();
        if ((lambda * dir).cwiseAbs().maxCoeff() < opts.step_tol) {
            res.converged = res.residual <= opts.residual_tol;
            return res;
        }
    }
    res.converged = res.residual <= opts.residual_tol;
    return res;
}

}  // namespace

RootResult damped_newton(const EstimatingFunction& f, const Eigen::VectorXd& x0, const SolverOptions& opts,
                         const std::string& start_label) {
    opts.validate();
    if (opts.active.empty()) return solve_full(f, x0, opts, start_label);

    const auto k = static_cast<Eigen::Index>(opts.active.size());
    for (auto a : opts.active)
        if (a >= static_cast<std::size_t>(x0.size())) throw ConfigError("active index out of range");
    auto embed = [&](const Eigen::VectorXd& z) {
        Eigen::VectorXd x = x0;
        for (Eigen::Index i = 0; i < k; ++i) x[static_cast<Eigen::Index>(opts.active[static_cast<std::size_t>(i)])] = z[i];
        return x;
    };
    EstimatingFunction reduced = [&](const Eigen::VectorXd& z) {
        const Eigen::VectorXd full = f(embed(z));
        Eigen::VectorXd out(k);
        for (Eigen::Index i = 0; i < k; ++i) out[i] = full[static_cast<Eigen::Index>(opts.active[static_cast<std::size_t>(i)])];
        return out;
    };
    Eigen::VectorXd z0(k);
    for (Eigen::Index i = 0; i < k; ++i) z0[i] = x0[static_cast<Eigen::Index>(opts.active[static_cast<std::size_t>(i)])];
    RootResult res = solve_full(reduced, z0, opts, start_label);
    res.x = embed(res.x);
    return res;
}

}  // namespace shadow_att
