#include "shadow_att/simulation.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "shadow_att/errors.hpp"
#include "shadow_att/parallel.hpp"
#include "shadow_att/rng.hpp"

namespace shadow_att {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr const char* kSePrefix = "se:";
constexpr std::size_t kOracleChunk = 1'000'000;

double outcome_mean(const Eigen::Vector2d& loading, double x1, double x2) {
    return expit(loading[0] * x1 + loading[1] * x2);
}

double treat_prob(const ThetaParams& th, int y0, double x1) {
    return expit(th.intercept() + th.outcome_coef() * y0 + th.covariate_coefs()[0] * x1);
}

struct LatentDraw {
    double x1, x2;
    int y1, y0, t;
};

LatentDraw draw_one(const DgpSpec& spec, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    LatentDraw d{};
    d.x1 = normal(rng);
    d.x2 = normal(rng);
    d.y1 = unif(rng) < outcome_mean(spec.y1_loading, d.x1, d.x2) ? 1 : 0;
    d.y0 = unif(rng) < outcome_mean(spec.y0_loading, d.x1, d.x2) ? 1 : 0;
    d.t = unif(rng) < treat_prob(spec.theta0, d.y0, d.x1) ? 1 : 0;
    return d;
}

}  // namespace

void DgpSpec::validate() const {
    if (n < 1) throw ConfigError("simulation needs n >= 1");
    if (theta0.dim() != 3) throw ConfigError("simulation design uses a three-component theta");
}

SimulatedSample generate(const DgpSpec& spec) {
    spec.validate();
    Rng rng = make_stream(spec.seed, 0, StreamRole::dgp);
    std::vector<Observation> rows;
    rows.reserve(spec.n);
    LatentOutcomes latent;
    latent.y1.reserve(spec.n);
    latent.y0.reserve(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
        const auto d = draw_one(spec, rng);
        Observation o;
        o.t = d.t;
        o.y = d.t == 1 ? d.y1 : d.y0;
        o.u = Eigen::VectorXd::Constant(1, d.x1);
        o.z = Eigen::VectorXd::Constant(1, d.x2);
        rows.push_back(std::move(o));
        latent.y1.push_back(d.y1);
        latent.y0.push_back(d.y0);
    }
    return {Dataset(std::move(rows), {"x1"}, {"x2"}), std::move(latent)};
}

AttOracle true_att(const DgpSpec& spec, std::size_t mc_size, unsigned threads) {
    spec.validate();
    if (mc_size < 10'000) throw PreconditionFailure("true_att needs mc_size >= 1e4");
    const std::size_t chunks = (mc_size + kOracleChunk - 1) / kOracleChunk;
    // Per chunk: sum t, sum t d, sum (t d)^2, sum t^2 d... kept as raw moments.
    struct Acc {
        double t = 0, td = 0, td2 = 0, t_td = 0;
    };
    std::vector<Acc> acc(chunks);
    parallel_for(chunks, threads, [&](std::size_t c) {
        Rng rng = make_stream(spec.seed, c, StreamRole::oracle);
        const std::size_t m = std::min(kOracleChunk, mc_size - c * kOracleChunk);
        Acc a;
        for (std::size_t i = 0; i < m; ++i) {
            const auto d = draw_one(spec, rng);
            const double td = d.t * (d.y1 - d.y0);
            a.t += d.t;
            a.td += td;
            a.td2 += td * td;
            a.t_td += d.t * td;
        }
        acc[c] = a;
    });
    Acc tot;
    for (const auto& a : acc) tot.t += a.t, tot.td += a.td, tot.td2 += a.td2, tot.t_td += a.t_td;
    const double n = static_cast<double>(mc_size);
    const double p = tot.t / n;
    if (!(p > 0.0)) throw NoTreatedUnits("no treated draws in the oracle sample");
    const double att = tot.td / tot.t;
    // Ratio-estimator delta method: Var(T (D - att)) / (n p^2).
    const double var = (tot.td2 - 2.0 * att * tot.t_td + att * att * tot.t) / n;
    return {att, std::sqrt(var / n) / p};
}

GaussHermiteRule gauss_hermite(std::size_t nodes) {
    if (nodes < 1) throw PreconditionFailure("quadrature needs at least one node");
    const auto N = static_cast<Eigen::Index>(nodes);
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(N, N);
    for (Eigen::Index k = 1; k < N; ++k) jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
    GaussHermiteRule rule;
    rule.nodes = eig.eigenvalues();
    rule.weights = eig.eigenvectors().row(0).transpose().array().square();
    rule.weights /= rule.weights.sum();
    return rule;
}

namespace {

struct QuadratureMoments {
    double p_treated = 0.0;
    double e_ty1 = 0.0;
    double e_ty0 = 0.0;
};

QuadratureMoments quadrature_moments(const DgpSpec& spec, std::size_t nodes) {
    spec.validate();
    const auto rule = gauss_hermite(nodes);
    QuadratureMoments q;
    for (Eigen::Index a = 0; a < rule.nodes.size(); ++a) {
        for (Eigen::Index b = 0; b < rule.nodes.size(); ++b) {
            const double x1 = rule.nodes[a], x2 = rule.nodes[b];
            const double wt = rule.weights[a] * rule.weights[b];
            const double m1 = outcome_mean(spec.y1_loading, x1, x2);
            const double m0 = outcome_mean(spec.y0_loading, x1, x2);
            const double pi1 = treat_prob(spec.theta0, 1, x1);
            const double pi0 = treat_prob(spec.theta0, 0, x1);
            // Y1 and Y0 are independent given x, and T depends on Y0 only.
            for (int y1 = 0; y1 <= 1; ++y1) {
                for (int y0 = 0; y0 <= 1; ++y0) {
                    const double pr = (y1 ? m1 : 1.0 - m1) * (y0 ? m0 : 1.0 - m0) * (y0 ? pi1 : pi0);
                    q.p_treated += wt * pr;
                    q.e_ty1 += wt * pr * y1;
                    q.e_ty0 += wt * pr * y0;
                }
            }
        }
    }
    return q;
}

}  // namespace

double true_att_quadrature(const DgpSpec& spec, std::size_t nodes) {
    const auto q = quadrature_moments(spec, nodes);
    return (q.e_ty1 - q.e_ty0) / q.p_treated;
}

double treated_probability_quadrature(const DgpSpec& spec, std::size_t nodes) {
    return quadrature_moments(spec, nodes).p_treated;
}

std::string to_string(ThetaMode m) {
    switch (m) {
        case ThetaMode::eff: return "eff";
        case ThetaMode::truth: return "truth";
        case ThetaMode::arb1: return "arb1";
        case ThetaMode::arb2: return "arb2";
    }
    return "eff";
}

ThetaMode parse_theta_mode(const std::string& s) {
    if (s == "eff") return ThetaMode::eff;
    if (s == "truth") return ThetaMode::truth;
    if (s == "arb1") return ThetaMode::arb1;
    if (s == "arb2") return ThetaMode::arb2;
    throw ConfigError("unknown theta mode '" + s + "' (expected eff, truth, arb1 or arb2)");
}

void StudyConfig::validate() const {
    if (reps < 2) throw ConfigError("a study needs reps >= 2");
    solver.validate();
    if (perturb) perturb->validate();
    if (perturb_reps > reps) throw ConfigError("perturb_reps exceeds reps");
}

std::map<std::string, double> study_estimates(const Dataset& ds, const StudyConfig& cfg, const ThetaParams& theta0,
                                              std::span<const double> weights) {
    require_both_arms(ds);
    const bool unit = weights.empty();
    std::map<std::string, double> out;
    const auto nuis = fit_nuisance_pair(ds, cfg.nuisance, {}, weights, true);
    const EstimationSample s(ds, predict_rows(nuis, ds), weights);

    ThetaParams theta = theta0;
    if (cfg.theta_mode == ThetaMode::eff) {
        PipelineOptions opts;
        opts.nuisance = cfg.nuisance;
        opts.solver = cfg.solver;
        opts.naive = cfg.naive;
        opts.variance = unit;
        std::optional<ConditionalMeanModel> w_model;
        if (cfg.naive) w_model = fit_treatment_model(ds, cfg.nuisance, {}, weights);
        const auto rep = estimate_with(ds, nuis, w_model ? &*w_model : nullptr, opts, weights);
        out = rep.point_estimates();
        for (const auto& [k, v] : rep.se_analytic) out[kSePrefix + k] = v;
        return out;
    }
    if (cfg.theta_mode == ThetaMode::arb1 || cfg.theta_mode == ThetaMode::arb2) {
        // w(x) from a logistic fit of T on x; E0(Y0 | x) from the control fit.
        const auto w_model = fit_treatment_model(ds, NuisanceSpec{}, {}, weights);
        const auto& x = ds.features();
        Eigen::VectorXd w_hat(static_cast<Eigen::Index>(ds.n()));
        for (Eigen::Index i = 0; i < w_hat.size(); ++i) w_hat[i] = w_model.predict(x.row(i).transpose());
        const Eigen::VectorXd m0 = s.pred.m0;
        GFunction g;
        if (cfg.theta_mode == ThetaMode::arb1) {
            g = [w_hat](const Observation& o, std::size_t i, const ThetaParams&) {
                const double w = w_hat[static_cast<Eigen::Index>(i)], x1 = o.u[0];
                return Eigen::Vector3d(w, w * x1, w * x1 * x1).eval();
            };
        } else {
            g = [w_hat, m0, theta0](const Observation& o, std::size_t i, const ThetaParams&) {
                const auto ii = static_cast<Eigen::Index>(i);
                const double x1 = o.u[0];
                const double lead = expit(theta0.intercept() + theta0.outcome_coef() + theta0.covariate_coefs()[0] * x1);
                return Eigen::Vector3d(w_hat[ii], lead * m0[ii], w_hat[ii] * x1).eval();
            };
        }
        theta = solve_theta_with_g(ds, g, cfg.solver, weights).theta;
        for (std::size_t j = 0; j < theta.dim(); ++j) out[theta_name(j)] = theta[j];
    }
    out[kDeltaAlt] = delta_alt(ds, theta, weights);
    out[kDeltaEff] = delta_eff(s, theta);
    return out;
}

double SimSummary::relative_efficiency() const {
    auto a = stats.find(kDeltaAlt), e = stats.find(kDeltaEff);
    if (a == stats.end() || e == stats.end() || a->second.count == 0 || e->second.count == 0) return kNaN;
    return a->second.mse / e->second.mse;
}

double SimSummary::failure_fraction() const {
    return reps == 0 ? 0.0 : static_cast<double>(failed) / static_cast<double>(reps);
}

namespace {

std::string fmt(double v, int prec = 4) {
    if (!std::isfinite(v)) return "NA";
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

std::string fmt_full(double v) {
    if (!std::isfinite(v)) return "NA";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

std::string SimSummary::table() const {
    std::ostringstream os;
    os << "theta mode: " << to_string(theta_mode) << "   n = " << spec.n << "   reps = " << reps
       << "   failed = " << failed << "   true ATT = " << fmt(truth_att, 5) << "\n";
    os << std::left << std::setw(12) << "estimator" << std::right << std::setw(10) << "truth" << std::setw(10)
       << "bias" << std::setw(10) << "sd" << std::setw(10) << "mse" << std::setw(10) << "se" << std::setw(10)
       << "sd_p" << std::setw(10) << "cover" << "\n";
    for (const auto& name : estimator_order) {
        const auto& s = stats.at(name);
        os << std::left << std::setw(12) << name << std::right << std::setw(10) << fmt(s.truth) << std::setw(10)
           << fmt(s.bias) << std::setw(10) << fmt(s.sd) << std::setw(10) << fmt(s.mse) << std::setw(10)
           << fmt(s.mean_se_analytic) << std::setw(10) << fmt(s.mean_sd_p) << std::setw(10) << fmt(s.coverage, 3)
           << "\n";
    }
    os << "RE (mse delta_alt / mse delta_eff) = " << fmt(relative_efficiency(), 3) << "\n";
    return os.str();
}

std::string SimSummary::key_values(const std::map<std::string, std::string>& extra) const {
    std::ostringstream os;
    for (const auto& [k, v] : extra) os << k << " = " << v << "\n";
    os << "theta_mode = " << to_string(theta_mode) << "\n";
    os << "n = " << spec.n << "\n";
    os << "theta0 = " << fmt_full(spec.theta0[0]) << "," << fmt_full(spec.theta0[1]) << ","
       << fmt_full(spec.theta0[2]) << "\n";
    os << "reps = " << reps << "\n";
    os << "failed = " << failed << "\n";
    os << "perturb_reps = " << perturb_reps << "\n";
    os << "B = " << B << "\n";
    os << "truth_att_quadrature = " << fmt_full(truth_att) << "\n";
    os << "truth_att_mc = " << fmt_full(truth_mc.value) << "\n";
    os << "truth_att_mc_se = " << fmt_full(truth_mc.se) << "\n";
    os << "relative_efficiency = " << fmt_full(relative_efficiency()) << "\n";
    for (const auto& name : estimator_order) {
        const auto& s = stats.at(name);
        os << name << ".truth = " << fmt_full(s.truth) << "\n";
        os << name << ".count = " << s.count << "\n";
        os << name << ".mean = " << fmt_full(s.mean) << "\n";
        os << name << ".bias = " << fmt_full(s.bias) << "\n";
        os << name << ".sd = " << fmt_full(s.sd) << "\n";
        os << name << ".mse = " << fmt_full(s.mse) << "\n";
        os << name << ".se_analytic = " << fmt_full(s.mean_se_analytic) << "\n";
        os << name << ".sd_p = " << fmt_full(s.mean_sd_p) << "\n";
        os << name << ".coverage = " << fmt_full(s.coverage) << "\n";
        os << name << ".perturbed = " << s.perturbed << "\n";
    }
    return os.str();
}

SimSummary run_study(const DgpSpec& spec, const StudyConfig& cfg) {
    spec.validate();
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();

    SimSummary sum;
    sum.spec = spec;
    sum.theta_mode = cfg.theta_mode;
    sum.reps = cfg.reps;
    sum.seed = cfg.seed;
    sum.perturb_reps = cfg.perturb ? cfg.perturb_reps : 0;
    sum.B = cfg.perturb ? cfg.perturb->B : 0;
    sum.truth_att = true_att_quadrature(spec);
    if (cfg.truth_mc_size > 0) {
        DgpSpec oracle_spec = spec;
        oracle_spec.seed = stream_key(cfg.seed, 0, StreamRole::oracle);
        sum.truth_mc = true_att(oracle_spec, cfg.truth_mc_size, cfg.threads);
    }

    std::vector<std::map<std::string, double>> est(cfg.reps);
    std::vector<std::map<std::string, double>> sdp(cfg.reps);
    std::vector<std::string> err(cfg.reps);
    parallel_for(cfg.reps, cfg.threads, [&](std::size_t r) {
        DgpSpec rep_spec = spec;
        rep_spec.seed = stream_key(cfg.seed, r, StreamRole::dgp);
        const auto sample = generate(rep_spec);
        const Dataset& ds = sample.data;
        try {
            est[r] = study_estimates(ds, cfg, spec.theta0);
        } catch (const Error& e) {
            err[r] = e.what();
            return;
        }
        if (cfg.perturb && r < cfg.perturb_reps) {
            PerturbationConfig pc = *cfg.perturb;
            pc.seed = stream_key(cfg.seed, r, StreamRole::perturb);
            pc.threads = 1;
            pc.targets.clear();
            for (const auto& [k, v] : est[r])
                if (k.rfind(kSePrefix, 0) != 0) pc.targets.push_back(k);
            try {
                const auto res = perturb_se(
                    ds, [&](std::span<const double> w) { return study_estimates(ds, cfg, spec.theta0, w); }, pc);
                sdp[r] = res.sd;
            } catch (const Error& e) {
                err[r] = std::string("perturbation: ") + e.what();
            }
        }
    });

    // Estimator order: thetas, then deltas in a fixed order.
    std::vector<std::string> order;
    for (std::size_t j = 0; j < spec.theta0.dim(); ++j) order.push_back(theta_name(j));
    for (const char* k : {kDeltaEff, kDeltaAlt, kDeltaNv1, kDeltaNv2}) order.emplace_back(k);
    for (const auto& name : order) {
        bool present = false;
        for (const auto& m : est) present = present || m.count(name);
        if (present) sum.estimator_order.push_back(name);
    }

    for (std::size_t r = 0; r < cfg.reps; ++r)
        if (!err[r].empty()) {
            sum.failures.push_back("rep " + std::to_string(r) + ": " + err[r]);
            if (est[r].empty()) ++sum.failed;
        }

    for (const auto& name : sum.estimator_order) {
        EstimatorStats s;
        s.name = name;
        s.truth = name.rfind("theta_", 0) == 0 ? spec.theta0[std::stoul(name.substr(6)) - 1] : sum.truth_att;
        auto& col = sum.estimates[name];
        auto& sdcol = sum.sd_p[name];
        col.assign(cfg.reps, kNaN);
        sdcol.assign(cfg.reps, kNaN);
        double se_sum = 0.0;
        std::size_t se_count = 0;
        std::vector<double> cov_est, cov_sd;
        for (std::size_t r = 0; r < cfg.reps; ++r) {
            if (auto it = est[r].find(name); it != est[r].end()) col[r] = it->second;
            if (auto it = est[r].find(kSePrefix + name); it != est[r].end() && std::isfinite(it->second))
                se_sum += it->second, ++se_count;
            if (auto it = sdp[r].find(name); it != sdp[r].end()) sdcol[r] = it->second;
            if (std::isfinite(col[r]) && std::isfinite(sdcol[r])) {
                cov_est.push_back(col[r]);
                cov_sd.push_back(sdcol[r]);
            }
        }
        double sum_v = 0.0, sum_e2 = 0.0;
        for (double v : col)
            if (std::isfinite(v)) {
                ++s.count;
                sum_v += v;
                sum_e2 += (v - s.truth) * (v - s.truth);
            }
        s.mean = s.count ? sum_v / static_cast<double>(s.count) : kNaN;
        s.bias = s.mean - s.truth;
        s.sd = sample_sd(col);
        s.mse = s.count ? sum_e2 / static_cast<double>(s.count) : kNaN;
        s.mean_se_analytic = se_count ? se_sum / static_cast<double>(se_count) : kNaN;
        s.perturbed = cov_est.size();
        if (!cov_est.empty()) {
            double m = 0.0;
            for (double v : cov_sd) m += v;
            s.mean_sd_p = m / static_cast<double>(cov_sd.size());
            s.coverage = coverage_eval(cov_est, cov_sd, s.truth);
        } else {
            s.mean_sd_p = kNaN;
            s.coverage = kNaN;
        }
        sum.stats[name] = s;
    }
    sum.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return sum;
}

}  // namespace shadow_att
