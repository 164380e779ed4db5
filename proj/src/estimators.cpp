#include "shadow_att/estimators.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "shadow_att/errors.hpp"
#include "shadow_att/moments.hpp"
#include "shadow_att/scores.hpp"

namespace shadow_att {

EstimationSample::EstimationSample(const Dataset& ds, NuisancePredictions predictions, std::span<const double> w)
    : data(&ds), pred(std::move(predictions)), weights(resolve_weights(w, ds.n())) {
    if (pred.m0.size() != static_cast<Eigen::Index>(ds.n()))
        throw DimensionMismatch(ds.n(), static_cast<std::size_t>(pred.m0.size()), "nuisance predictions");
}

double EstimationSample::p_hat() const {
    double num = 0.0;
    for (std::size_t i = 0; i < n(); ++i) num += weights[static_cast<Eigen::Index>(i)] * (*data)[i].t;
    return num / weights.sum();
}

void require_both_arms(const Dataset& ds) {
    if (ds.treated_count() == 0 || ds.control_count() == 0)
        throw PreconditionFailure("both treatment arms must be present");
}

std::string theta_name(std::size_t j) { return "theta_" + std::to_string(j + 1); }

namespace {

double weight_at(const Eigen::VectorXd& w, std::size_t i) { return w[static_cast<Eigen::Index>(i)]; }

}  // namespace

Eigen::VectorXd mean_efficient_score(const EstimationSample& s, const ThetaParams& theta) {
    const auto& ds = *s.data;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(theta.dim()));
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const auto& o = ds[i];
        const auto m = compute_moments(o.u, s.pred.m0[static_cast<Eigen::Index>(i)], std::nullopt, theta);
        acc += weight_at(s.weights, i) * s_eff_from(treated_factor(o.t, o.y, o.u, theta), m);
    }
    return acc / s.weights.sum();
}

Eigen::VectorXd proxy_start(const Dataset& ds, std::span<const double> weights) {
    const auto n = static_cast<Eigen::Index>(ds.n());
    const auto p = static_cast<Eigen::Index>(ds.p());
    Eigen::MatrixXd feats(n, p + 1);
    Eigen::VectorXd t(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& o = ds[static_cast<std::size_t>(i)];
        feats(i, 0) = o.y * (1 - o.t);
        feats.row(i).tail(p) = o.u.transpose();
        t[i] = o.t;
    }
    try {
        const auto model = fit_logistic(feats, t, resolve_weights(weights, ds.n()));
        if (model.separated() || !model.coefficients().allFinite()) return Eigen::VectorXd::Zero(p + 2);
        return model.coefficients();
    } catch (const Error&) {
        return Eigen::VectorXd::Zero(p + 2);
    }
}

Eigen::VectorXd marginal_start(const Dataset& ds, std::span<const double> weights) {
    const auto n = static_cast<Eigen::Index>(ds.n());
    const auto p = static_cast<Eigen::Index>(ds.p());
    Eigen::MatrixXd feats(n, p);
    Eigen::VectorXd t(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& o = ds[static_cast<std::size_t>(i)];
        feats.row(i) = o.u.transpose();
        t[i] = o.t;
    }
    Eigen::VectorXd out = Eigen::VectorXd::Zero(p + 2);
    try {
        const auto model = fit_logistic(feats, t, resolve_weights(weights, ds.n()));
        const Eigen::VectorXd& c = model.coefficients();
        if (model.separated() || !c.allFinite()) return out;
        out[0] = c[0];
        out.tail(p) = c.tail(p);
    } catch (const Error&) {
    }
    return out;
}

namespace {

ThetaSolution solve_with_starts(const Dataset& ds, const EstimatingFunction& f, const SolverOptions& opts,
                                std::span<const double> weights) {
    require_both_arms(ds);
    opts.validate();
    const auto d = static_cast<Eigen::Index>(ds.theta_dim());
    const Eigen::VectorXd base = opts.init ? *opts.init : Eigen::VectorXd::Zero(d);
    if (base.size() != d)
        throw DimensionMismatch(static_cast<std::size_t>(d), static_cast<std::size_t>(base.size()), "solver init");

    std::vector<std::pair<std::string, Eigen::VectorXd>> starts;
    if (opts.init) starts.emplace_back("init", base);
    if (opts.multi_start || !opts.init) {
        if (opts.multi_start) {
            Eigen::VectorXd marginal = marginal_start(ds, weights);
            if (!opts.active.empty()) {
                Eigen::VectorXd keep = base;
                for (auto a : opts.active) keep[static_cast<Eigen::Index>(a)] = marginal[static_cast<Eigen::Index>(a)];
                marginal = keep;
            }
            starts.emplace_back("marginal", marginal);
            Eigen::VectorXd proxy = proxy_start(ds, weights);
            // Inactive components keep the caller's values.
            if (!opts.active.empty()) {
                Eigen::VectorXd keep = base;
                for (auto a : opts.active) keep[static_cast<Eigen::Index>(a)] = proxy[static_cast<Eigen::Index>(a)];
                proxy = keep;
            }
            starts.emplace_back("proxy", proxy);
        }
        starts.emplace_back("zero", opts.active.empty() ? Eigen::VectorXd::Zero(d) : base);
    }

    std::optional<RootResult> best;
    std::size_t saturated_count = 0;
    for (const auto& [label, x0] : starts) {
        RootResult r = damped_newton(f, x0, opts, label);
        const bool saturated = r.x.cwiseAbs().maxCoeff() > opts.max_abs;
        if (r.converged && !saturated) return ThetaSolution{ThetaParams(r.x), std::move(r)};
        if (saturated) {
            r.converged = false;
            ++saturated_count;
        }
        if (!best || r.residual < best->residual) best = std::move(r);
    }
    std::ostringstream msg;
    msg << "theta solver found no admissible root: " << saturated_count << " of " << starts.size()
        << " starts ended beyond |theta| = " << opts.max_abs << "; best residual " << best->residual << " from start '"
        << best->start << "'";
    throw NonConvergence(msg.str(), best->residual);
}

}  // namespace

ThetaSolution solve_theta_eff(const EstimationSample& s, const SolverOptions& opts) {
    const EstimatingFunction f = [&s](const Eigen::VectorXd& x) { return mean_efficient_score(s, ThetaParams(x)); };
    return solve_with_starts(*s.data, f, opts, std::span<const double>(s.weights.data(), static_cast<std::size_t>(s.weights.size())));
}

ThetaSolution solve_theta_eff(const Dataset& ds, const NuisancePair& nuis, const SolverOptions& opts,
                              std::span<const double> weights) {
    require_both_arms(ds);
    const EstimationSample s(ds, predict_rows(nuis, ds), weights);
    return solve_theta_eff(s, opts);
}

ThetaSolution solve_theta_with_g(const Dataset& ds, const GFunction& g, const SolverOptions& opts,
                                 std::span<const double> weights) {
    const Eigen::VectorXd w = resolve_weights(weights, ds.n());
    const auto d = ds.theta_dim();
    const EstimatingFunction f = [&](const Eigen::VectorXd& x) {
        const ThetaParams theta(x);
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < ds.n(); ++i) {
            const auto& o = ds[i];
            const Eigen::VectorXd gi = g(o, i, theta);
            if (static_cast<std::size_t>(gi.size()) != d) throw DimensionMismatch(d, static_cast<std::size_t>(gi.size()), "g(x)");
            acc += weight_at(w, i) * treated_factor(o.t, o.y, o.u, theta) * gi;
        }
        return Eigen::VectorXd(acc / w.sum());
    };
    return solve_with_starts(ds, f, opts, weights);
}

double delta_eff(const EstimationSample& s, const ThetaParams& theta) {
    if (!s.pred.has_m1()) throw PreconditionFailure("delta_eff requires the treated-arm nuisance p1");
    const auto& ds = *s.data;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const auto& o = ds[i];
        const auto ii = static_cast<Eigen::Index>(i);
        const auto m = compute_moments(o.u, s.pred.m0[ii], s.pred.m1[ii], theta);
        const double f = treated_factor(o.t, o.y, o.u, theta);
        const double wi = s.weights[ii];
        num += wi * (f * o.y - f * (m.w * (*m.e1_y1) + (1.0 - m.w) * m.e0_y0pi2) / m.B);
        den += wi * (o.t - f * m.w / m.B);
    }
    if (std::abs(den / s.weights.sum()) < kDegenerateDenominator)
        throw DegenerateDenominator("delta_eff denominator is degenerate");
    return num / den;
}

double delta_eff(const Dataset& ds, const ThetaParams& theta, const NuisancePair& nuis, std::span<const double> weights) {
    return delta_eff(EstimationSample(ds, predict_rows(nuis, ds), weights), theta);
}

double delta_alt(const Dataset& ds, const ThetaParams& theta, std::span<const double> weights) {
    const Eigen::VectorXd w = resolve_weights(weights, ds.n());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const auto& o = ds[i];
        num += weight_at(w, i) * treated_factor(o.t, o.y, o.u, theta) * o.y;
        den += weight_at(w, i) * o.t;
    }
    if (!(den > 0.0)) throw NoTreatedUnits("delta_alt needs at least one treated unit");
    return num / den;
}

namespace {

double naive(const Dataset& ds, const ConditionalMeanModel& w_model, const ConditionalMeanModel* m0_model,
             std::span<const double> weights) {
    const Eigen::VectorXd w = resolve_weights(weights, ds.n());
    const auto& x = ds.features();
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const auto& o = ds[i];
        const auto row = x.row(static_cast<Eigen::Index>(i)).transpose();
        const double wh = w_model.predict(row);
        double term = o.t * o.y - (1 - o.t) * wh / (1.0 - wh) * o.y;
        if (m0_model) term -= (o.t - wh) / (1.0 - wh) * m0_model->predict(row);
        num += weight_at(w, i) * term;
        den += weight_at(w, i) * o.t;
    }
    if (!(den > 0.0)) throw NoTreatedUnits("naive estimator needs at least one treated unit");
    return num / den;
}

}  // namespace

double delta_nv1(const Dataset& ds, const ConditionalMeanModel& w_model, std::span<const double> weights) {
    return naive(ds, w_model, nullptr, weights);
}

double delta_nv2(const Dataset& ds, const ConditionalMeanModel& w_model, const ConditionalMeanModel& m0_model,
                 std::span<const double> weights) {
    return naive(ds, w_model, &m0_model, weights);
}

Eigen::VectorXd VarianceBlocks::theta_se() const {
    const Eigen::MatrixXd Minv = M_hat.inverse();
    return (Minv.diagonal() / static_cast<double>(n)).cwiseSqrt();
}

double VarianceBlocks::delta_eff_se() const {
    const auto d = static_cast<Eigen::Index>(dim());
    return std::sqrt(V_hat(d, d) / static_cast<double>(n));
}

VarianceBlocks variance_blocks(const EstimationSample& s, const ThetaParams& theta, double delta) {
    if (!s.pred.has_m1()) throw PreconditionFailure("variance blocks require the treated-arm nuisance p1");
    const auto& ds = *s.data;
    const auto d = static_cast<Eigen::Index>(theta.dim());
    const double wsum = s.weights.sum();
    const double p = s.p_hat();
    const double alt = delta_alt(ds, theta, std::span<const double>(s.weights.data(), ds.n()));

    VarianceBlocks vb;
    vb.n = ds.n();
    vb.p_hat = p;
    vb.M_hat = Eigen::MatrixXd::Zero(d, d);
    vb.Q_hat = Eigen::VectorXd::Zero(d);
    vb.D_hat = Eigen::VectorXd::Zero(d);

    std::vector<Eigen::VectorXd> scores(ds.n());
    std::vector<double> alt_if(ds.n());
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const auto& o = ds[i];
        const auto ii = static_cast<Eigen::Index>(i);
        const auto m = compute_moments(o.u, s.pred.m0[ii], s.pred.m1[ii], theta, delta);
        const double wi = s.weights[ii] / wsum;
        const double f = treated_factor(o.t, o.y, o.u, theta);
        vb.M_hat += wi / m.B * m.A * m.A.transpose();
        vb.Q_hat += wi * q_summand(o.u, s.pred.m0[ii], theta);
        vb.D_hat += wi * (*m.V) / m.B * m.A;
        const double ph = phi_from(o.t, o.y, f, m, delta, p);
        vb.phi_second_moment += wi * ph * ph;
        scores[i] = s_eff_from(f, m);
        alt_if[i] = phi_alt_from(o.t, o.y, f, alt, p);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(vb.M_hat);
    if (llt.info() != Eigen::Success || !vb.M_hat.allFinite()) throw SingularM("M is not positive definite");
    const Eigen::MatrixXd Minv = llt.solve(Eigen::MatrixXd::Identity(d, d));
    const Eigen::VectorXd dq = vb.D_hat - vb.Q_hat;
    vb.H_hat = Minv * dq / p;

    vb.J_hat = Eigen::MatrixXd::Zero(d + 1, d + 1);
    vb.J_hat.topLeftCorner(d, d) = -vb.M_hat;
    vb.J_hat.block(d, 0, 1, d) = dq.transpose() / p;
    vb.J_hat(d, d) = -1.0;

    vb.V_hat.resize(d + 1, d + 1);
    vb.V_hat.topLeftCorner(d, d) = Minv;
    vb.V_hat.block(0, d, d, 1) = vb.H_hat;
    vb.V_hat.block(d, 0, 1, d) = vb.H_hat.transpose();
    vb.V_hat(d, d) = dq.dot(Minv * dq) / (p * p) + vb.phi_second_moment;

    // delta_alt(theta_eff) linearizes as phi_alt - p^-1 Q' M^-1 S_eff.
    const Eigen::VectorXd qm = Minv * vb.Q_hat / p;
    double alt_var = 0.0;
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const double v = alt_if[i] - qm.dot(scores[i]);
        alt_var += s.weights[static_cast<Eigen::Index>(i)] / wsum * v * v;
    }
    vb.delta_alt_se = std::sqrt(alt_var / static_cast<double>(vb.n));
    return vb;
}

VarianceBlocks variance_blocks(const Dataset& ds, const ThetaParams& theta, double delta, const NuisancePair& nuis) {
    return variance_blocks(EstimationSample(ds, predict_rows(nuis, ds)), theta, delta);
}

double two_sided_p(double statistic) { return std::erfc(std::abs(statistic) / std::sqrt(2.0)); }

WaldResult wald_theta2(const ThetaParams& theta_hat, const VarianceBlocks& blocks) {
    const double se = blocks.theta_se()[1];
    WaldResult r;
    r.statistic = theta_hat.outcome_coef() / se;
    r.p_value = two_sided_p(r.statistic);
    return r;
}

Interval ci95(double estimate, double se) { return {estimate - 1.96 * se, estimate + 1.96 * se}; }

std::map<std::string, double> EstimateReport::point_estimates() const {
    std::map<std::string, double> out = delta_estimates;
    for (std::size_t j = 0; j < theta_hat.dim(); ++j) out[theta_name(j)] = theta_hat[j];
    return out;
}

void EstimateReport::update_intervals() {
    ci_95.clear();
    const auto points = point_estimates();
    for (const auto& [name, est] : points) {
        if (auto it = se_perturb.find(name); it != se_perturb.end()) ci_95[name] = ci95(est, it->second);
        else if (auto jt = se_analytic.find(name); jt != se_analytic.end()) ci_95[name] = ci95(est, jt->second);
    }
}

EstimateReport estimate_from_sample(const EstimationSample& s, const PipelineOptions& opts) {
    const auto& ds = *s.data;
    const std::span<const double> w(s.weights.data(), ds.n());
    EstimateReport rep;
    auto sol = solve_theta_eff(s, opts.solver);
    rep.theta_hat = sol.theta;
    rep.solver = sol.diagnostics;
    if (sol.diagnostics.start == "zero")
        rep.warnings.emplace_back("theta solver needed the fallback zero start");

    const double alt = delta_alt(ds, rep.theta_hat, w);
    rep.delta_estimates[kDeltaAlt] = alt;
    if (s.pred.has_m1()) {
        double eff = alt;
        try {
            eff = delta_eff(s, rep.theta_hat);
        } catch (const DegenerateDenominator&) {
            rep.warnings.emplace_back("delta_eff denominator degenerate; reporting delta_alt in its place");
        }
        rep.delta_estimates[kDeltaEff] = eff;

        if (opts.variance) {
            try {
                auto vb = variance_blocks(s, rep.theta_hat, eff);
                const auto se = vb.theta_se();
                for (std::size_t j = 0; j < rep.theta_hat.dim(); ++j)
                    rep.se_analytic[theta_name(j)] = se[static_cast<Eigen::Index>(j)];
                rep.se_analytic[kDeltaEff] = vb.delta_eff_se();
                rep.se_analytic[kDeltaAlt] = vb.delta_alt_se;
                rep.wald_theta2 = wald_theta2(rep.theta_hat, vb);
                rep.blocks = std::move(vb);
            } catch (const SingularM& e) {
                rep.warnings.emplace_back(e.what());
            }
        }
    }
    rep.update_intervals();
    return rep;
}

EstimateReport estimate_with(const Dataset& ds, const NuisancePair& nuis, const ConditionalMeanModel* w_model,
                             const PipelineOptions& opts, std::span<const double> weights) {
    require_both_arms(ds);
    const EstimationSample s(ds, predict_rows(nuis, ds), weights);
    EstimateReport rep = estimate_from_sample(s, opts);
    for (const auto& wmsg : nuis.p0.warnings()) rep.warnings.push_back("p0: " + wmsg);
    if (nuis.p1)
        for (const auto& wmsg : nuis.p1->warnings()) rep.warnings.push_back("p1: " + wmsg);
    if (w_model) {
        rep.delta_estimates[kDeltaNv1] = delta_nv1(ds, *w_model, weights);
        rep.delta_estimates[kDeltaNv2] = delta_nv2(ds, *w_model, nuis.p0, weights);
    }
    return rep;
}

EstimateReport estimate(const Dataset& ds, const PipelineOptions& opts, std::span<const double> weights) {
    require_both_arms(ds);
    const auto nuis = fit_nuisance_pair(ds, opts.nuisance, {}, weights, true);
    std::optional<ConditionalMeanModel> w_model;
    if (opts.naive) w_model = fit_treatment_model(ds, opts.nuisance, {}, weights);
    return estimate_with(ds, nuis, w_model ? &*w_model : nullptr, opts, weights);
}

}  // namespace shadow_att
