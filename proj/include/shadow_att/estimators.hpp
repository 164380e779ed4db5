#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "shadow_att/data.hpp"
#include "shadow_att/nuisance.hpp"
#include "shadow_att/propensity.hpp"
#include "shadow_att/solver.hpp"

namespace shadow_att {

// Estimator names used as keys throughout reports and summaries.
inline constexpr const char* kDeltaEff = "delta_eff";
inline constexpr const char* kDeltaAlt = "delta_alt";
inline constexpr const char* kDeltaNv1 = "delta_nv1";
inline constexpr const char* kDeltaNv2 = "delta_nv2";

/// Denominators below this in magnitude are treated as degenerate.
inline constexpr double kDegenerateDenominator = 1e-12;

struct ThetaSolution {
    ThetaParams theta;
    RootResult diagnostics;
};

/// Rows of a dataset with per-row nuisance predictions and resampling weights.
/// Every estimating equation below is a weighted mean over these rows, so
/// unit weights give the ordinary sample means.
struct EstimationSample {
    const Dataset* data = nullptr;
    NuisancePredictions pred;
    Eigen::VectorXd weights;

    EstimationSample(const Dataset& ds, NuisancePredictions predictions, std::span<const double> w = {});

    std::size_t n() const noexcept { return data->n(); }
    /// Weighted treated fraction.
    double p_hat() const;
};

/// Mean efficient score (1/n) sum S_eff(w_i; theta).
Eigen::VectorXd mean_efficient_score(const EstimationSample& s, const ThetaParams& theta);

/// Solves the mean efficient score for theta.
ThetaSolution solve_theta_eff(const EstimationSample& s, const SolverOptions& opts = {});
ThetaSolution solve_theta_eff(const Dataset& ds, const NuisancePair& nuis, const SolverOptions& opts = {},
                              std::span<const double> weights = {});

/// g(x) for the arbitrary-g estimating equation. Receives the row, its
/// index and the current theta, so theta-dependent choices (such as the
/// efficient one) are expressible.
using GFunction = std::function<Eigen::VectorXd(const Observation&, std::size_t row, const ThetaParams&)>;

/// Solves (1/n) sum (t - pi)/(1 - pi) g(x_i) = 0.
ThetaSolution solve_theta_with_g(const Dataset& ds, const GFunction& g, const SolverOptions& opts = {},
                                 std::span<const double> weights = {});

/// Closed-form root of the mean of phi for fixed theta.
double delta_eff(const EstimationSample& s, const ThetaParams& theta);
double delta_eff(const Dataset& ds, const ThetaParams& theta, const NuisancePair& nuis,
                 std::span<const double> weights = {});

/// Inverse-propensity estimator (sum t y - sum_controls pi/(1-pi) y) / sum t.
double delta_alt(const Dataset& ds, const ThetaParams& theta, std::span<const double> weights = {});

/// Naive estimators assuming strong ignorability; `w_model` is pr(T = 1 | x)
/// and `m0_model` is E(Y0 | x) fitted on controls.
double delta_nv1(const Dataset& ds, const ConditionalMeanModel& w_model, std::span<const double> weights = {});
double delta_nv2(const Dataset& ds, const ConditionalMeanModel& w_model, const ConditionalMeanModel& m0_model,
                 std::span<const double> weights = {});

struct VarianceBlocks {
    std::size_t n = 0;
    double p_hat = 0.0;
    Eigen::MatrixXd M_hat;
    Eigen::VectorXd Q_hat;
    Eigen::VectorXd D_hat;
    Eigen::VectorXd H_hat;
    /// (1/n) sum phi^2 at (theta, delta)
    double phi_second_moment = 0.0;
    Eigen::MatrixXd J_hat;  ///< (d+1) x (d+1)
    Eigen::MatrixXd V_hat;  ///< (d+1) x (d+1)

    std::size_t dim() const noexcept { return static_cast<std::size_t>(M_hat.rows()); }
    Eigen::VectorXd theta_se() const;
    double delta_eff_se() const;
    /// Asymptotic sd of delta_alt(theta_eff): mean of (phi_alt - p^-1 Q' M^-1 S_eff)^2.
    double delta_alt_se = 0.0;
};

VarianceBlocks variance_blocks(const EstimationSample& s, const ThetaParams& theta, double delta);
VarianceBlocks variance_blocks(const Dataset& ds, const ThetaParams& theta, double delta, const NuisancePair& nuis);

struct WaldResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// Two-sided test of theta_2 = 0 using se from M^-1 / n.
WaldResult wald_theta2(const ThetaParams& theta_hat, const VarianceBlocks& blocks);
/// Two-sided normal p-value for estimate / se.
double two_sided_p(double statistic);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double v) const noexcept { return lo <= v && v <= hi; }
};

Interval ci95(double estimate, double se);

struct EstimateReport {
    ThetaParams theta_hat;
    std::map<std::string, double> delta_estimates;
    std::map<std::string, double> se_analytic;  ///< keys: theta_1.., delta_eff, delta_alt
    std::map<std::string, double> se_perturb;
    std::map<std::string, Interval> ci_95;      ///< from se_perturb when present, else se_analytic
    WaldResult wald_theta2;
    std::optional<VarianceBlocks> blocks;
    RootResult solver;
    std::vector<std::string> warnings;

    /// All point estimates (theta components then deltas) keyed by name.
    std::map<std::string, double> point_estimates() const;
    /// Refreshes ci_95 from the current se maps.
    void update_intervals();
};

std::string theta_name(std::size_t j);  ///< "theta_1", ...

struct PipelineOptions {
    NuisanceSpec nuisance;
    SolverOptions solver;
    bool naive = true;     ///< also compute delta_nv1 / delta_nv2
    bool variance = true;  ///< analytic variance blocks and Wald test
};

/// Full-sample pipeline: fit nuisances, solve theta_eff, compute the deltas.
/// Throws NonConvergence when no start reaches the residual tolerance.
EstimateReport estimate(const Dataset& ds, const PipelineOptions& opts, std::span<const double> weights = {});

/// Same pipeline on already-fitted nuisances (and optional w(x) model for the
/// naive estimators).
EstimateReport estimate_with(const Dataset& ds, const NuisancePair& nuis, const ConditionalMeanModel* w_model,
                             const PipelineOptions& opts, std::span<const double> weights = {});

/// Pipeline core over precomputed predictions; used by cross-fitting.
EstimateReport estimate_from_sample(const EstimationSample& s, const PipelineOptions& opts);

/// Starting value from a logistic fit of T on (y (1 - t), u).
Eigen::VectorXd proxy_start(const Dataset& ds, std::span<const double> weights = {});

/// Starting value from a logistic fit of T on u, with theta_2 = 0.
Eigen::VectorXd marginal_start(const Dataset& ds, std::span<const double> weights = {});

/// Throws PreconditionFailure unless both arms are present.
void require_both_arms(const Dataset& ds);

}  // namespace shadow_att
