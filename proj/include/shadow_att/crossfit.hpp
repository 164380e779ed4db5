#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "shadow_att/data.hpp"
#include "shadow_att/estimators.hpp"
#include "shadow_att/nuisance.hpp"

namespace shadow_att {

inline constexpr std::size_t kDefaultFolds = 5;

struct FoldPlan {
    std::size_t K = 0;
    std::vector<std::size_t> assignment;  ///< row -> fold index
    std::uint64_t seed = 0;

    std::vector<std::size_t> fold_rows(std::size_t k) const;
    /// Rows outside fold k, sorted.
    std::vector<std::size_t> complement(std::size_t k) const;
    std::vector<std::size_t> sizes() const;
};

/// Random K-fold partition stratified by treatment arm. Each arm is shuffled
/// and dealt round-robin, treated first, so fold sizes differ by at most one.
FoldPlan make_folds(const Dataset& ds, std::size_t K, std::uint64_t seed);

struct CrossfitOptions {
    std::size_t K = kDefaultFolds;
    std::uint64_t seed = 0;
    unsigned threads = 1;  ///< fold fits in parallel; 0 = all cores
};

/// Fits nuisances on each fold complement, predicts out of fold, and solves
/// the pooled equations: theta from the stacked efficient score, then delta in
/// closed form. Naive estimators are not reported.
EstimateReport crossfit_estimate(const Dataset& ds, const NuisanceFitter& fitter, const PipelineOptions& opts,
                                 const CrossfitOptions& cf, std::span<const double> weights = {});
EstimateReport crossfit_estimate(const Dataset& ds, const PipelineOptions& opts, const CrossfitOptions& cf,
                                 std::span<const double> weights = {});

/// Out-of-fold predictions with the leak check applied; exposed for tests.
NuisancePredictions crossfit_predictions(const Dataset& ds, const FoldPlan& plan, const NuisanceFitter& fitter,
                                         std::span<const double> weights = {}, unsigned threads = 1);

}  // namespace shadow_att
