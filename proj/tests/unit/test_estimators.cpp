#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "shadow_att/errors.hpp"
#include "shadow_att/estimators.hpp"
#include "shadow_att/moments.hpp"
#include "shadow_att/rng.hpp"
#include "shadow_att/scores.hpp"

using namespace shadow_att;

namespace {

const Eigen::Vector3d kTheta0(0.3, -0.3, -0.25);

double max_abs(const Eigen::VectorXd& v) { return v.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("theta_eff solver output is a certified root") {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        const auto ds = testing::simulate(600, seed);
        const auto nuis = fit_nuisance_pair(ds, NuisanceSpec{});
        const EstimationSample s(ds, predict_rows(nuis, ds));
        SolverOptions opts;
        const auto sol = solve_theta_eff(s, opts);
        CHECK(sol.diagnostics.converged);
        CHECK(max_abs(mean_efficient_score(s, sol.theta)) <= opts.residual_tol);
        CHECK(max_abs(sol.theta.values()) <= opts.max_abs);
    }
}

TEST_CASE("a single treatment arm is a precondition failure") {
    std::vector<Observation> rows{testing::obs(1, 0, 0, 0), testing::obs(1, 1, 1, 1), testing::obs(1, 1, 2, 0)};
    const Dataset ds(rows, {"u"}, {"z"});
    CHECK_THROWS_AS(estimate(ds, PipelineOptions{}), PreconditionFailure);
    CHECK_THROWS_AS(solve_theta_with_g(ds, [](const Observation&, std::size_t, const ThetaParams&) {
        return Eigen::Vector3d(1, 1, 1).eval();
    }), PreconditionFailure);
}

TEST_CASE("the efficient g reproduces the efficient root") {
    const auto ds = testing::simulate(600, 12);
    const auto nuis = fit_nuisance_pair(ds, NuisanceSpec{});
    const auto pred = predict_rows(nuis, ds);
    const EstimationSample s(ds, pred);
    const auto eff = solve_theta_eff(s);
    const GFunction g = [&](const Observation& o, std::size_t i, const ThetaParams& th) {
        const auto m = compute_moments(o.u, pred.m0[static_cast<Eigen::Index>(i)], std::nullopt, th);
        return Eigen::VectorXd(m.e0_dpi / m.e0_pi);
    };
    SolverOptions opts;
    const auto via_g = solve_theta_with_g(ds, g, opts);
    CHECK(max_abs(via_g.theta.values() - eff.theta.values()) < 1e-8);
}

TEST_CASE("theta_2 = 0 sub-model recovers the remaining coefficients") {
    const ThetaParams truth{0.3, 0.0, -0.25};
    double bias1 = 0.0, bias3 = 0.0;
    const int reps = 100;
    for (int r = 0; r < reps; ++r) {
        DgpSpec spec;
        spec.n = 5000;
        spec.theta0 = truth;
        spec.seed = stream_key(31, static_cast<std::uint64_t>(r), StreamRole::dgp);
        const auto ds = generate(spec).data;
        const auto nuis = fit_nuisance_pair(ds, NuisanceSpec{});
        SolverOptions opts;
        opts.active = {0, 2};
        const auto sol = solve_theta_eff(ds, nuis, opts);
        CHECK(sol.theta[1] == 0.0);
        bias1 += (sol.theta[0] - 0.3) / reps;
        bias3 += (sol.theta[2] + 0.25) / reps;
    }
    CHECK(std::abs(bias1) < 0.05);
    CHECK(std::abs(bias3) < 0.05);
}

TEST_CASE("delta_alt with all-zero control outcomes is the treated mean") {
    std::vector<Observation> rows{testing::obs(1, 1, 0.1, 0), testing::obs(1, 0, 0.2, 1), testing::obs(1, 1, -1, 0),
                                  testing::obs(0, 0, 0.5, 1), testing::obs(0, 0, 0.9, 0)};
    const Dataset ds(rows, {"u"}, {"z"});
    CHECK(delta_alt(ds, ThetaParams{0.3, -0.3, -0.25}) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("naive estimators collapse under constant or vanishing nuisances") {
    const auto ds = testing::simulate(300, 9);
    const double c = 0.4;
    const auto w_const = ConditionalMeanModel::constant(Arm::pooled, 2, c);
    double sty = 0, sy0 = 0, st = 0;
    for (std::size_t i = 0; i < ds.n(); ++i) {
        sty += ds[i].t * ds[i].y;
        sy0 += (1 - ds[i].t) * ds[i].y;
        st += ds[i].t;
    }
    CHECK(delta_nv1(ds, w_const) == doctest::Approx((sty - c / (1 - c) * sy0) / st).epsilon(1e-13));

    // E0(Y0 | x) = 0 is clamped at the prediction floor, so the augmentation
    // reduces to floor * sum (t - w) / (1 - w).
    const auto w_model = fit_treatment_model(ds, NuisanceSpec{});
    const auto zero = ConditionalMeanModel::constant(Arm::control, 2, 0.0);
    double aug = 0.0;
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const double w = w_model.predict(ds.features().row(static_cast<Eigen::Index>(i)).transpose());
        aug += (ds[i].t - w) / (1 - w);
    }
    CHECK(delta_nv2(ds, w_model, zero) ==
          doctest::Approx(delta_nv1(ds, w_model) - kPredictionFloor * aug / st).epsilon(1e-13));
}

TEST_CASE("naive estimators are unbiased when treatment is randomized") {
    DgpSpec spec;
    spec.theta0 = ThetaParams{0.1, 0.0, 0.0};
    const double truth = true_att_quadrature(spec);
    std::vector<double> e1, e2;
    for (int r = 0; r < 200; ++r) {
        spec.seed = stream_key(55, static_cast<std::uint64_t>(r), StreamRole::dgp);
        const auto ds = generate(spec).data;
        const auto w = fit_treatment_model(ds, NuisanceSpec{});
        const auto m0 = fit_arm_model(ds, Arm::control, NuisanceSpec{});
        e1.push_back(delta_nv1(ds, w) - truth);
        e2.push_back(delta_nv2(ds, w, m0) - truth);
    }
    const auto b1 = testing::mean_se(e1), b2 = testing::mean_se(e2);
    CHECK(std::abs(b1.mean) < 3 * b1.se);
    CHECK(std::abs(b2.mean) < 3 * b2.se);
}

TEST_CASE("variance blocks: constant fields give M = a a' / b") {
    // No covariates and theta_2 = 0: pi is constant, so A and B are constant.
    std::vector<Observation> rows;
    for (int i = 0; i < 40; ++i) {
        Observation o;
        o.t = i % 3 == 0;
        o.y = i % 2;
        o.u = Eigen::VectorXd(0);
        o.z = Eigen::VectorXd::Constant(1, 0.1 * i);
        rows.push_back(o);
    }
    const Dataset ds(rows, {}, {"z"});
    const double c = 0.35;
    NuisancePair nuis{ConditionalMeanModel::constant(Arm::control, 1, c),
                      ConditionalMeanModel::constant(Arm::treated, 1, 0.6)};
    const ThetaParams th{-0.4, 0.0};
    const double p = testing::logistic(-0.4);
    const auto vb = variance_blocks(ds, th, 0.1, nuis);
    const Eigen::Vector2d a(p, p * c);
    const double b = p / (1 - p);
    const Eigen::Matrix2d expected = a * a.transpose() / b;
    CHECK((vb.M_hat - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("variance identity and block structure") {
    const auto ds = testing::simulate(600, 41);
    const auto nuis = fit_nuisance_pair(ds, NuisanceSpec{});
    const EstimationSample s(ds, predict_rows(nuis, ds));
    const auto th = solve_theta_eff(s).theta;
    const double d_eff = delta_eff(s, th);
    const auto vb = variance_blocks(s, th, d_eff);
    const Eigen::VectorXd dq = vb.D_hat - vb.Q_hat;
    const Eigen::MatrixXd Minv = vb.M_hat.inverse();
    const double rhs = vb.phi_second_moment + dq.dot(Minv * dq) / (vb.p_hat * vb.p_hat);
    CHECK(std::abs(vb.V_hat(3, 3) - rhs) < 1e-10);
    CHECK(std::abs(vb.V_hat(3, 3) - (vb.phi_second_moment + vb.H_hat.dot(vb.M_hat * vb.H_hat))) < 1e-10);
    CHECK(vb.J_hat.block(0, 3, 3, 1).cwiseAbs().maxCoeff() == 0.0);
    CHECK(vb.J_hat(3, 3) == -1.0);
    CHECK((vb.V_hat - vb.V_hat.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(vb.delta_eff_se() == doctest::Approx(std::sqrt(vb.V_hat(3, 3) / 600.0)));
}

TEST_CASE("Monte Carlo checks of M and of the phi_eff variance at n = 1e5") {
    const auto ds = testing::simulate(100'000, 2025);
    const auto nuis = testing::true_nuisances(kTheta0);
    const ThetaParams th{0.3, -0.3, -0.25};
    DgpSpec spec;
    const double delta = true_att_quadrature(spec);
    const EstimationSample s(ds, predict_rows(nuis, ds));
    const auto vb = variance_blocks(s, th, delta);

    ScoreContext ctx;
    ctx.theta = th;
    ctx.delta = delta;
    ctx.p_hat = vb.p_hat;
    ctx.nuis = nuis;
    ctx.H = vb.H_hat;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    double pe = 0, pe2 = 0;
    const double n = static_cast<double>(ds.n());
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const Eigen::Vector3d si = s_eff(ds[i], ctx);
        mean += si / n;
        cov += si * si.transpose() / n;
        const double v = phi_eff(ds[i], ctx);
        pe += v / n;
        pe2 += v * v / n;
    }
    cov -= mean * mean.transpose();
    CHECK((vb.M_hat - cov).norm() / cov.norm() < 0.02);
    const double var_phi_eff = pe2 - pe * pe;
    CHECK(std::abs(var_phi_eff - vb.V_hat(3, 3)) / vb.V_hat(3, 3) < 0.02);
}

TEST_CASE("Wald statistic and two-sided p-values") {
    CHECK(two_sided_p(0.0) == 1.0);
    CHECK(two_sided_p(1.96) == doctest::Approx(0.05).epsilon(1e-3));
    VarianceBlocks vb;
    vb.n = 100;
    vb.M_hat = Eigen::Matrix3d::Identity();
    const auto w0 = wald_theta2(ThetaParams{0.5, 0.0, 1.0}, vb);
    CHECK(w0.statistic == 0.0);
    CHECK(w0.p_value == 1.0);
    const auto w1 = wald_theta2(ThetaParams{0.5, 0.196, 1.0}, vb);
    CHECK(w1.statistic == doctest::Approx(1.96));
}

TEST_CASE("weights: unit weights are bit-exact and a common scale changes nothing") {
    const auto ds = testing::simulate(400, 8);
    PipelineOptions opts;
    const auto plain = estimate(ds, opts);
    const std::vector<double> ones(ds.n(), 1.0);
    const auto unit = estimate(ds, opts, ones);
    CHECK(plain.point_estimates() == unit.point_estimates());

    std::vector<double> w(ds.n()), w3(ds.n());
    for (std::size_t i = 0; i < ds.n(); ++i) {
        w[i] = 0.5 + static_cast<double>(i % 7) / 4.0;
        w3[i] = 3.0 * w[i];
    }
    const auto a = estimate(ds, opts, w).point_estimates();
    const auto b = estimate(ds, opts, w3).point_estimates();
    for (const auto& [k, v] : a) CHECK(b.at(k) == doctest::Approx(v).epsilon(1e-8));
}

TEST_CASE("estimate reports every estimator with analytic standard errors") {
    const auto ds = testing::simulate(600, 17);
    const auto rep = estimate(ds, PipelineOptions{});
    for (const char* k : {kDeltaEff, kDeltaAlt, kDeltaNv1, kDeltaNv2}) CHECK(rep.delta_estimates.count(k) == 1);
    for (const char* k : {"theta_1", "theta_2", "theta_3", kDeltaEff, kDeltaAlt}) {
        REQUIRE(rep.se_analytic.count(k) == 1);
        CHECK(rep.se_analytic.at(k) > 0.0);
        CHECK(rep.ci_95.at(k).contains(rep.point_estimates().at(k)));
    }
    CHECK(rep.blocks.has_value());
    CHECK(rep.wald_theta2.p_value > 0.0);
    CHECK(rep.wald_theta2.p_value <= 1.0);
}
