#include "shadow_att/inference.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <random>

#include "shadow_att/errors.hpp"
#include "shadow_att/parallel.hpp"
#include "shadow_att/rng.hpp"

namespace shadow_att {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kFailureWarning = 0.10;
}  // namespace

void PerturbationConfig::validate() const {
    if (B < 2) throw ConfigError("perturbation needs B >= 2");
}

double PerturbationResult::failure_fraction() const {
    const auto B = static_cast<std::size_t>(replicates.rows());
    return B == 0 ? 0.0 : static_cast<double>(failed) / static_cast<double>(B);
}

double sample_sd(std::span<const double> values) {
    double sum = 0.0;
    std::size_t m = 0;
    for (double v : values)
        if (std::isfinite(v)) sum += v, ++m;
    if (m < 2) return kNaN;
    const double mean = sum / static_cast<double>(m);
    double ss = 0.0;
    for (double v : values)
        if (std::isfinite(v)) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(m - 1));
}

Eigen::VectorXd perturbation_weights(std::size_t n, std::uint64_t seed, std::size_t b) {
    Rng rng = make_stream(seed, b, StreamRole::perturb);
    std::exponential_distribution<double> law(1.0);
    Eigen::VectorXd w(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        double v = 0.0;
        while (!(v > 0.0)) v = law(rng);
        w[i] = v;
    }
    return w;
}

PerturbationResult perturb_se(std::size_t n, const WeightedPipeline& pipeline, const PerturbationConfig& cfg) {
    cfg.validate();
    PerturbationResult out;
    try {
        out.point = pipeline({});
    } catch (const Error& e) {
        throw PipelineFailure(std::string("unit-weight run failed: ") + e.what());
    }
    out.targets = cfg.targets;
    if (out.targets.empty())
        for (const auto& [k, v] : out.point) out.targets.push_back(k);
    for (const auto& t : out.targets)
        if (!out.point.count(t)) throw PipelineFailure("target '" + t + "' missing from the unit-weight run");

    const auto T = static_cast<Eigen::Index>(out.targets.size());
    out.replicates = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(cfg.B), T, kNaN);
    std::vector<char> failed(cfg.B, 0);
    parallel_for(cfg.B, cfg.threads, [&](std::size_t b) {
        const Eigen::VectorXd w = perturbation_weights(n, cfg.seed, b);
        try {
            const auto est = pipeline(std::span<const double>(w.data(), n));
            for (Eigen::Index j = 0; j < T; ++j) {
                auto it = est.find(out.targets[static_cast<std::size_t>(j)]);
                if (it != est.end()) out.replicates(static_cast<Eigen::Index>(b), j) = it->second;
            }
        } catch (const Error&) {
            failed[b] = 1;
        }
    });
    for (char f : failed) out.failed += f ? 1 : 0;
    if (out.failure_fraction() > kFailureWarning)
        out.warnings.push_back(std::to_string(out.failed) + " of " + std::to_string(cfg.B) +
                               " perturbation replicates failed");

    for (Eigen::Index j = 0; j < T; ++j) {
        const auto& name = out.targets[static_cast<std::size_t>(j)];
        std::vector<double> col(cfg.B);
        for (std::size_t b = 0; b < cfg.B; ++b) col[b] = out.replicates(static_cast<Eigen::Index>(b), j);
        out.sd[name] = sample_sd(col);
        out.ci_95[name] = ci95(out.point[name], out.sd[name]);

        // Running sd via Welford over the successful replicates.
        auto& trace = out.trace[name];
        trace.reserve(cfg.B);
        double mean = 0.0, m2 = 0.0;
        std::size_t m = 0;
        for (double v : col) {
            if (std::isfinite(v)) {
                ++m;
                const double delta = v - mean;
                mean += delta / static_cast<double>(m);
                m2 += delta * (v - mean);
            }
            trace.push_back(m >= 2 ? std::sqrt(m2 / static_cast<double>(m - 1)) : kNaN);
        }
    }
    return out;
}

PerturbationResult perturb_se(const Dataset& ds, const WeightedPipeline& pipeline, const PerturbationConfig& cfg) {
    return perturb_se(ds.n(), pipeline, cfg);
}

std::map<std::string, double> report_estimates(const EstimateReport& r) { return r.point_estimates(); }

WeightedPipeline make_estimate_pipeline(const Dataset& ds, const PipelineOptions& opts, bool refit_nuisance,
                                        std::optional<CrossfitOptions> crossfit) {
    PipelineOptions inner = opts;
    inner.variance = false;
    if (crossfit) {
        NuisanceFitter fitter = make_fitter(opts.nuisance, true);
        if (!refit_nuisance) {
            // Fold models fitted once at unit weights and reused by every replicate.
            const FoldPlan plan = make_folds(ds, crossfit->K, crossfit->seed);
            auto preds = std::make_shared<NuisancePredictions>(crossfit_predictions(ds, plan, fitter, {}, crossfit->threads));
            return [&ds, inner, preds](std::span<const double> w) {
                return report_estimates(estimate_from_sample(EstimationSample(ds, *preds, w), inner));
            };
        }
        return [&ds, inner, fitter, cf = *crossfit](std::span<const double> w) {
            CrossfitOptions local = cf;
            local.threads = 1;
            return report_estimates(crossfit_estimate(ds, fitter, inner, local, w));
        };
    }
    if (!refit_nuisance) {
        auto nuis = std::make_shared<NuisancePair>(fit_nuisance_pair(ds, opts.nuisance, {}, {}, true));
        std::shared_ptr<ConditionalMeanModel> w_model;
        if (opts.naive) w_model = std::make_shared<ConditionalMeanModel>(fit_treatment_model(ds, opts.nuisance));
        return [&ds, inner, nuis, w_model](std::span<const double> w) {
            return report_estimates(estimate_with(ds, *nuis, w_model.get(), inner, w));
        };
    }
    return [&ds, inner](std::span<const double> w) { return report_estimates(estimate(ds, inner, w)); };
}

double coverage_eval(std::span<const double> estimates, std::span<const double> sds, double truth) {
    if (estimates.empty()) throw PreconditionFailure("coverage needs at least one replication");
    if (estimates.size() != sds.size()) throw DimensionMismatch(estimates.size(), sds.size(), "sds");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < estimates.size(); ++i) hit += ci95(estimates[i], sds[i]).contains(truth) ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(estimates.size());
}

}  // namespace shadow_att
