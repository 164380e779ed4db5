#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shadow_att/data.hpp"
#include "shadow_att/estimators.hpp"
#include "shadow_att/inference.hpp"
#include "shadow_att/nuisance.hpp"
#include "shadow_att/propensity.hpp"

namespace shadow_att {

/// Simulation design: X ~ N2(0, I), Y1 ~ Bern(expit(a1' x)), Y0 ~ Bern(expit(a0' x)),
/// T ~ Bern(expit(theta_1 + theta_2 y0 + theta_3 x1)). x1 is the
/// non-shadow covariate u and x2 the shadow variable z; x2 never enters T.
struct DgpSpec {
    std::size_t n = 600;
    ThetaParams theta0{0.3, -0.3, -0.25};
    Eigen::Vector2d y1_loading{1.0, 0.0};
    Eigen::Vector2d y0_loading{0.0, 1.0};
    std::uint64_t seed = 0;

    void validate() const;
};

/// Potential outcomes of a simulated sample. Kept apart from the Dataset so
/// that nothing handed to an estimator can see them.
struct LatentOutcomes {
    std::vector<int> y1;
    std::vector<int> y0;
};

struct SimulatedSample {
    Dataset data;
    LatentOutcomes latent;
};

SimulatedSample generate(const DgpSpec& spec);

struct AttOracle {
    double value = 0.0;
    double se = 0.0;  ///< Monte Carlo standard error; 0 for quadrature
};

/// Brute force: mean(y1 - y0 | t = 1) over mc_size latent draws.
AttOracle true_att(const DgpSpec& spec, std::size_t mc_size, unsigned threads = 1);
/// Gauss-Hermite quadrature over (x1, x2) summing the (y1, y0) configurations.
double true_att_quadrature(const DgpSpec& spec, std::size_t nodes = 64);
/// pr(T = 1) by the same quadrature.
double treated_probability_quadrature(const DgpSpec& spec, std::size_t nodes = 64);

/// Nodes and weights for E f(Z), Z ~ N(0, 1) (probabilists' Hermite).
struct GaussHermiteRule {
    Eigen::VectorXd nodes;
    Eigen::VectorXd weights;
};
GaussHermiteRule gauss_hermite(std::size_t nodes);

enum class ThetaMode { eff, truth, arb1, arb2 };
std::string to_string(ThetaMode m);
ThetaMode parse_theta_mode(const std::string& s);

struct StudyConfig {
    std::size_t reps = 500;
    ThetaMode theta_mode = ThetaMode::eff;
    NuisanceSpec nuisance;
    SolverOptions solver;
    bool naive = true;  ///< include the naive estimators (eff mode only)
    /// Perturbation sds for the first perturb_reps replications.
    std::optional<PerturbationConfig> perturb;
    std::size_t perturb_reps = 0;
    std::uint64_t seed = 0;
    unsigned threads = 1;         ///< replications in parallel; 0 = all cores
    std::size_t truth_mc_size = 1'000'000;

    void validate() const;
};

struct EstimatorStats {
    std::string name;
    double truth = 0.0;
    std::size_t count = 0;  ///< successful replications
    double mean = 0.0;
    double bias = 0.0;
    double sd = 0.0;
    double mse = 0.0;
    double mean_se_analytic = 0.0;  ///< NaN when unavailable
    double mean_sd_p = 0.0;         ///< NaN when not perturbed
    double coverage = 0.0;          ///< from sd_p; NaN when not perturbed
    std::size_t perturbed = 0;
};

struct SimSummary {
    DgpSpec spec;
    ThetaMode theta_mode = ThetaMode::eff;
    std::size_t reps = 0;
    std::size_t failed = 0;
    std::size_t perturb_reps = 0;
    std::size_t B = 0;
    double truth_att = 0.0;  ///< quadrature
    AttOracle truth_mc;
    std::uint64_t seed = 0;
    double runtime_seconds = 0.0;
    std::vector<std::string> estimator_order;
    std::map<std::string, EstimatorStats> stats;
    /// Per-replication estimates (NaN for failures), keyed by estimator.
    std::map<std::string, std::vector<double>> estimates;
    std::map<std::string, std::vector<double>> sd_p;
    std::vector<std::string> failures;  ///< "rep r: message"

    /// MSE(delta_alt) / MSE(delta_eff); NaN if either is missing.
    double relative_efficiency() const;
    double failure_fraction() const;
    std::string table() const;
    /// key = value lines; `extra` entries are written first.
    std::string key_values(const std::map<std::string, std::string>& extra = {}) const;
};

/// Estimates for one simulated dataset under the study's theta mode.
std::map<std::string, double> study_estimates(const Dataset& ds, const StudyConfig& cfg, const ThetaParams& theta0,
                                              std::span<const double> weights = {});

SimSummary run_study(const DgpSpec& spec, const StudyConfig& cfg);

}  // namespace shadow_att
