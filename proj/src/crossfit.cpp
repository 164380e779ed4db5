#include "shadow_att/crossfit.hpp"

#include <algorithm>
#include <optional>
#include <random>
#include <string>

#include "shadow_att/errors.hpp"
#include "shadow_att/parallel.hpp"
#include "shadow_att/rng.hpp"

namespace shadow_att {

std::vector<std::size_t> FoldPlan::fold_rows(std::size_t k) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
        if (assignment[i] == k) out.push_back(i);
    return out;
}

std::vector<std::size_t> FoldPlan::complement(std::size_t k) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
        if (assignment[i] != k) out.push_back(i);
    return out;
}

std::vector<std::size_t> FoldPlan::sizes() const {
    std::vector<std::size_t> out(K, 0);
    for (auto a : assignment) ++out[a];
    return out;
}

FoldPlan make_folds(const Dataset& ds, std::size_t K, std::uint64_t seed) {
    if (K < 2) throw PreconditionFailure("cross-fitting needs K >= 2");
    if (ds.n() < 2 * K) throw PreconditionFailure("cross-fitting needs n >= 2K");
    std::vector<std::size_t> treated, control;
    for (std::size_t i = 0; i < ds.n(); ++i) (ds[i].t == 1 ? treated : control).push_back(i);
    if (treated.size() < K || control.size() < K)
        throw InfeasibleStratification("each treatment arm needs at least K = " + std::to_string(K) + " members");

    Rng rng = make_stream(seed, 0, StreamRole::folds);
    std::shuffle(treated.begin(), treated.end(), rng);
    std::shuffle(control.begin(), control.end(), rng);

    FoldPlan plan;
    plan.K = K;
    plan.seed = seed;
    plan.assignment.assign(ds.n(), 0);
    std::size_t slot = 0;
    for (auto i : treated) plan.assignment[i] = slot++ % K;
    for (auto i : control) plan.assignment[i] = slot++ % K;
    return plan;
}

NuisancePredictions crossfit_predictions(const Dataset& ds, const FoldPlan& plan, const NuisanceFitter& fitter,
                                         std::span<const double> weights, unsigned threads) {
    if (plan.assignment.size() != ds.n()) throw DimensionMismatch(ds.n(), plan.assignment.size(), "fold plan");
    std::vector<std::optional<NuisancePair>> models(plan.K);
    parallel_for(plan.K, threads, [&](std::size_t k) {
        const auto rows = plan.complement(k);
        try {
            models[k] = fitter(ds, rows, weights);
        } catch (const Error& e) {
            throw PipelineFailure("fold " + std::to_string(k) + ": " + e.what());
        }
    });

    const auto n = static_cast<Eigen::Index>(ds.n());
    const auto& x = ds.features();
    NuisancePredictions out;
    out.m0.resize(n);
    const bool with_p1 = std::all_of(models.begin(), models.end(), [](const auto& m) { return m->p1.has_value(); });
    if (with_p1) out.m1.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto row = static_cast<std::size_t>(i);
        const auto& pair = *models[plan.assignment[row]];
        if (pair.p0.trained_on(row) || (pair.p1 && pair.p1->trained_on(row)))
            throw PipelineFailure("fold " + std::to_string(plan.assignment[row]) + ": row " + std::to_string(row) +
                                  " was used to fit its own nuisance");
        out.m0[i] = pair.p0.predict(x.row(i).transpose());
        if (with_p1) out.m1[i] = pair.p1->predict(x.row(i).transpose());
    }
    return out;
}

EstimateReport crossfit_estimate(const Dataset& ds, const NuisanceFitter& fitter, const PipelineOptions& opts,
                                 const CrossfitOptions& cf, std::span<const double> weights) {
    require_both_arms(ds);
    const FoldPlan plan = make_folds(ds, cf.K, cf.seed);
    const EstimationSample s(ds, crossfit_predictions(ds, plan, fitter, weights, cf.threads), weights);
    return estimate_from_sample(s, opts);
}

EstimateReport crossfit_estimate(const Dataset& ds, const PipelineOptions& opts, const CrossfitOptions& cf,
                                 std::span<const double> weights) {
    return crossfit_estimate(ds, make_fitter(opts.nuisance, true), opts, cf, weights);
}

}  // namespace shadow_att
