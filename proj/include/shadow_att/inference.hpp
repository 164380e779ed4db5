#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shadow_att/crossfit.hpp"
#include "shadow_att/data.hpp"
#include "shadow_att/estimators.hpp"

namespace shadow_att {

/// Estimation closure: per-row weights in, named estimates out. Empty
/// weights mean unit weights.
using WeightedPipeline = std::function<std::map<std::string, double>(std::span<const double> weights)>;

struct PerturbationConfig {
    std::size_t B = 200;
    std::uint64_t seed = 0;
    bool refit_nuisance = true;
    std::vector<std::string> targets;  ///< empty: every estimate of the unit-weight run
    unsigned threads = 1;              ///< 0 = all cores

    void validate() const;
};

struct PerturbationResult {
    std::vector<std::string> targets;
    std::map<std::string, double> point;
    std::map<std::string, double> sd;
    std::map<std::string, Interval> ci_95;
    /// B x targets; NaN where a replicate failed.
    Eigen::MatrixXd replicates;
    /// Per target, sd of the successful replicates among the first b (NaN until two exist).
    std::map<std::string, std::vector<double>> trace;
    std::size_t failed = 0;
    std::vector<std::string> warnings;

    double failure_fraction() const;
};

/// Draws B vectors of iid standard exponential weights, one independent
/// stream per replicate, reruns the pipeline under each and summarizes the
/// spread. Throws PipelineFailure when the unit-weight run fails.
PerturbationResult perturb_se(std::size_t n, const WeightedPipeline& pipeline, const PerturbationConfig& cfg);
PerturbationResult perturb_se(const Dataset& ds, const WeightedPipeline& pipeline, const PerturbationConfig& cfg);

/// Standard exponential weights for replicate b.
Eigen::VectorXd perturbation_weights(std::size_t n, std::uint64_t seed, std::size_t b);

/// Estimation pipeline over a dataset. With refit_nuisance false the
/// nuisances are fitted once at unit weights and held fixed. A cross-fitting
/// option switches to out-of-fold nuisances.
WeightedPipeline make_estimate_pipeline(const Dataset& ds, const PipelineOptions& opts, bool refit_nuisance = true,
                                        std::optional<CrossfitOptions> crossfit = std::nullopt);

/// Flattens a report into named estimates.
std::map<std::string, double> report_estimates(const EstimateReport& r);

/// Fraction of intervals estimate +- 1.96 sd that contain truth.
double coverage_eval(std::span<const double> estimates, std::span<const double> sds, double truth);

/// Sample standard deviation (n - 1 divisor) of the finite entries.
double sample_sd(std::span<const double> values);

}  // namespace shadow_att
