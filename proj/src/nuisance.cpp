#include "shadow_att/nuisance.hpp"

#include <algorithm>
#include <cmath>

#include "shadow_att/errors.hpp"

namespace shadow_att {

namespace {

constexpr int kIrlsMaxIter = 100;
constexpr double kIrlsStepTol = 1e-8;
constexpr double kSeparationBound = 30.0;
constexpr double kRidge = 1e-8;

}  // namespace

double clamp_probability(double p) noexcept {
    return std::clamp(p, kPredictionFloor, 1.0 - kPredictionFloor);
}

std::string to_string(NuisanceKind kind) {
    switch (kind) {
        case NuisanceKind::logistic: return "logistic";
        case NuisanceKind::knn: return "knn";
        case NuisanceKind::fixed: return "fixed";
    }
    return "unknown";
}

NuisanceKind parse_nuisance_kind(const std::string& name) {
    if (name == "logistic") return NuisanceKind::logistic;
    if (name == "knn") return NuisanceKind::knn;
    throw ConfigError("unknown nuisance kind '" + name + "' (expected logistic or knn)");
}

ConditionalMeanModel ConditionalMeanModel::from_function(Arm arm, std::size_t feature_dim, Function fn) {
    ConditionalMeanModel m;
    m.kind_ = NuisanceKind::fixed;
    m.arm_ = arm;
    m.dim_ = feature_dim;
    m.fn_ = std::move(fn);
    return m;
}

ConditionalMeanModel ConditionalMeanModel::constant(Arm arm, std::size_t feature_dim, double mean) {
    return from_function(arm, feature_dim, [mean](const VectorRef&) { return mean; });
}

bool ConditionalMeanModel::trained_on(std::size_t row) const {
    return std::binary_search(training_rows_.begin(), training_rows_.end(), row);
}

void ConditionalMeanModel::set_training_rows(std::vector<std::size_t> rows) {
    std::sort(rows.begin(), rows.end());
    training_rows_ = std::move(rows);
}

double ConditionalMeanModel::predict(const VectorRef& x) const {
    if (static_cast<std::size_t>(x.size()) != dim_) throw DimensionMismatch(dim_, static_cast<std::size_t>(x.size()), "features");
    switch (kind_) {
        case NuisanceKind::logistic:
            return clamp_probability(expit(coef_[0] + coef_.tail(coef_.size() - 1).dot(x)));
        case NuisanceKind::fixed:
            return clamp_probability(fn_(x));
        case NuisanceKind::knn: {
            const auto& s = *knn_;
            const Eigen::VectorXd q = (x - s.center).cwiseQuotient(s.scale);
            const auto n = static_cast<std::size_t>(s.points.rows());
            std::vector<std::pair<double, std::size_t>> dist(n);
            for (std::size_t i = 0; i < n; ++i)
                dist[i] = {(s.points.row(static_cast<Eigen::Index>(i)).transpose() - q).squaredNorm(), i};
            const auto kk = std::min(k_, n);
            std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk), dist.end());
            double num = 0.0, den = 0.0, plain = 0.0;
            for (std::size_t j = 0; j < kk; ++j) {
                const auto i = static_cast<Eigen::Index>(dist[j].second);
                num += s.weights[i] * s.labels[i];
                den += s.weights[i];
                plain += s.labels[i];
            }
            return clamp_probability(den > 0.0 ? num / den : plain / static_cast<double>(kk));
        }
    }
    return 0.5;
}

ConditionalMeanModel fit_logistic(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels,
                                  const Eigen::VectorXd& weights, Arm arm) {
    const Eigen::Index n = features.rows();
    const Eigen::Index r = features.cols();
    if (labels.size() != n) throw DimensionMismatch(static_cast<std::size_t>(n), static_cast<std::size_t>(labels.size()), "labels");
    if (weights.size() != n) throw DimensionMismatch(static_cast<std::size_t>(n), static_cast<std::size_t>(weights.size()), "weights");
    if (n < r + 1) throw PreconditionFailure("logistic fit needs at least r + 1 rows");
    if ((weights.array() < 0.0).any()) throw PreconditionFailure("negative weights");
    const double wsum = weights.sum();
    if (!(wsum > 0.0)) throw PreconditionFailure("weights are all zero");

    const double mean = weights.dot(labels) / wsum;
    // Constant label among positively weighted rows: the MLE runs off to infinity.
    bool same = true;
    for (Eigen::Index i = 0; i < n && same; ++i)
        if (weights[i] > 0.0 && labels[i] != labels[0]) same = false;
    if (same) {
        auto m = ConditionalMeanModel::constant(arm, static_cast<std::size_t>(r), labels[0]);
        m.kind_ = NuisanceKind::logistic;
        m.coef_ = Eigen::VectorXd::Zero(r + 1);
        m.coef_[0] = logit(clamp_probability(mean));
        m.fn_ = {};
        m.warnings_.emplace_back("all labels identical; constant model");
        return m;
    }

    Eigen::MatrixXd design(n, r + 1);
    design.col(0).setOnes();
    design.rightCols(r) = features;

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(r + 1);
    bool converged = false;
    bool separated = false;
    for (int it = 0; it < kIrlsMaxIter; ++it) {
        const Eigen::VectorXd eta = design * beta;
        Eigen::VectorXd mu(n), wt(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            mu[i] = expit(eta[i]);
            wt[i] = weights[i] * mu[i] * (1.0 - mu[i]);
        }
        const Eigen::MatrixXd info = design.transpose() * wt.asDiagonal() * design;
        const Eigen::VectorXd score = design.transpose() * (weights.array() * (labels - mu).array()).matrix();

        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        auto usable = [&](const Eigen::LDLT<Eigen::MatrixXd>& f) {
            if (f.info() != Eigen::Success || !f.isPositive()) return false;
            const auto d = f.vectorD();
            return d.minCoeff() > 1e-12 * std::max(1.0, d.maxCoeff());
        };
        if (!usable(ldlt)) {
            ldlt.compute(info + kRidge * Eigen::MatrixXd::Identity(r + 1, r + 1));
            if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0)
                throw DegenerateDesign("weighted design is rank deficient");
        }
        const Eigen::VectorXd step = ldlt.solve(score);
        if (!step.allFinite()) throw DegenerateDesign("IRLS produced a non-finite step");
        beta += step;
        if (beta.cwiseAbs().maxCoeff() > kSeparationBound) {
            separated = true;
            break;
        }
        if (step.cwiseAbs().maxCoeff() < kIrlsStepTol) {
            converged = true;
            break;
        }
    }

    if (!separated) {
        // Fitted probabilities reproducing every label also indicate separation.
        const Eigen::VectorXd eta = design * beta;
        double worst = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            if (weights[i] > 0.0) worst = std::max(worst, std::abs(labels[i] - expit(eta[i])));
        separated = worst < kPredictionFloor;
    }

    ConditionalMeanModel m;
    m.kind_ = NuisanceKind::logistic;
    m.arm_ = arm;
    m.dim_ = static_cast<std::size_t>(r);
    m.coef_ = beta;
    m.separated_ = separated;
    if (separated) m.warnings_.emplace_back("Separation: fitted probabilities saturate at the labels");
    else if (!converged) m.warnings_.emplace_back("IRLS reached the iteration limit");
    return m;
}

ConditionalMeanModel fit_knn(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels,
                             const Eigen::VectorXd& weights, std::size_t k, Arm arm) {
    const Eigen::Index n = features.rows();
    if (n == 0) throw EmptyTrainingSet("k-NN fit on an empty training set");
    if (labels.size() != n) throw DimensionMismatch(static_cast<std::size_t>(n), static_cast<std::size_t>(labels.size()), "labels");
    if (weights.size() != n) throw DimensionMismatch(static_cast<std::size_t>(n), static_cast<std::size_t>(weights.size()), "weights");
    if (k < 1 || k > static_cast<std::size_t>(n)) throw PreconditionFailure("k-NN requires 1 <= k <= n");

    ConditionalMeanModel::KnnState s;
    s.center = features.colwise().mean().transpose();
    s.scale.resize(features.cols());
    for (Eigen::Index j = 0; j < features.cols(); ++j) {
        const double var = (features.col(j).array() - s.center[j]).square().sum() / static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
        s.scale[j] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    s.points = (features.rowwise() - s.center.transpose()).array().rowwise() / s.scale.transpose().array();
    s.labels = labels;
    s.weights = weights;

    ConditionalMeanModel m;
    m.kind_ = NuisanceKind::knn;
    m.arm_ = arm;
    m.dim_ = static_cast<std::size_t>(features.cols());
    m.k_ = k;
    m.knn_ = std::make_shared<const ConditionalMeanModel::KnnState>(std::move(s));
    return m;
}

std::size_t default_knn_k(std::size_t n) {
    if (n == 0) return 1;
    const auto k = static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(n), 0.8) / 2.0));
    return std::clamp<std::size_t>(k, 1, n);
}

Eigen::VectorXd resolve_weights(std::span<const double> weights, std::size_t n) {
    if (weights.empty()) return Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
    if (weights.size() != n) throw DimensionMismatch(n, weights.size(), "weights");
    Eigen::VectorXd w(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) throw PreconditionFailure("weights must be finite and nonnegative");
        w[static_cast<Eigen::Index>(i)] = weights[i];
    }
    return w;
}

namespace {

ConditionalMeanModel fit_on_rows(const Dataset& ds, const std::vector<std::size_t>& rows,
                                 const Eigen::VectorXd& labels_all, const Eigen::VectorXd& w_all,
                                 Arm arm, const NuisanceSpec& spec) {
    const auto m = static_cast<Eigen::Index>(rows.size());
    const auto& x = ds.features();
    if (m == 0) throw EmptyTrainingSet("no training rows for arm " + std::to_string(static_cast<int>(arm)));
    Eigen::MatrixXd feats(m, x.cols());
    Eigen::VectorXd labels(m), w(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
        feats.row(i) = x.row(r);
        labels[i] = labels_all[r];
        w[i] = w_all[r];
    }
    ConditionalMeanModel model = [&] {
        switch (spec.kind) {
            case NuisanceKind::logistic: return fit_logistic(feats, labels, w, arm);
            case NuisanceKind::knn:
                return fit_knn(feats, labels, w, spec.k ? std::min<std::size_t>(*spec.k, rows.size()) : default_knn_k(rows.size()), arm);
            case NuisanceKind::fixed: break;
        }
        throw ConfigError("fixed nuisances cannot be fitted; use pinned_fitter");
    }();
    model.set_training_rows(rows);
    return model;
}

std::vector<std::size_t> select_rows(const Dataset& ds, std::span<const std::size_t> rows, int arm) {
    std::vector<std::size_t> out;
    auto take = [&](std::size_t i) {
        if (arm < 0 || ds[i].t == arm) out.push_back(i);
    };
    if (rows.empty()) {
        for (std::size_t i = 0; i < ds.n(); ++i) take(i);
    } else {
        for (auto i : rows) take(i);
    }
    return out;
}

}  // namespace

ConditionalMeanModel fit_arm_model(const Dataset& ds, Arm arm, const NuisanceSpec& spec,
                                   std::span<const std::size_t> rows, std::span<const double> weights) {
    const auto w = resolve_weights(weights, ds.n());
    Eigen::VectorXd y(static_cast<Eigen::Index>(ds.n()));
    for (std::size_t i = 0; i < ds.n(); ++i) y[static_cast<Eigen::Index>(i)] = ds[i].y;
    return fit_on_rows(ds, select_rows(ds, rows, static_cast<int>(arm)), y, w, arm, spec);
}

NuisancePair fit_nuisance_pair(const Dataset& ds, const NuisanceSpec& spec,
                               std::span<const std::size_t> rows, std::span<const double> weights,
                               bool with_p1) {
    NuisancePair pair{fit_arm_model(ds, Arm::control, spec, rows, weights), std::nullopt};
    if (with_p1) pair.p1 = fit_arm_model(ds, Arm::treated, spec, rows, weights);
    return pair;
}

ConditionalMeanModel fit_treatment_model(const Dataset& ds, const NuisanceSpec& spec,
                                         std::span<const std::size_t> rows, std::span<const double> weights) {
    const auto w = resolve_weights(weights, ds.n());
    Eigen::VectorXd t(static_cast<Eigen::Index>(ds.n()));
    for (std::size_t i = 0; i < ds.n(); ++i) t[static_cast<Eigen::Index>(i)] = ds[i].t;
    return fit_on_rows(ds, select_rows(ds, rows, -1), t, w, Arm::pooled, spec);
}

NuisanceFitter make_fitter(const NuisanceSpec& spec, bool with_p1) {
    return [spec, with_p1](const Dataset& ds, std::span<const std::size_t> rows, std::span<const double> weights) {
        return fit_nuisance_pair(ds, spec, rows, weights, with_p1);
    };
}

NuisanceFitter pinned_fitter(NuisancePair pair) {
    return [pair = std::move(pair)](const Dataset&, std::span<const std::size_t>, std::span<const double>) {
        return pair;
    };
}

NuisancePredictions predict_rows(const NuisancePair& pair, const Dataset& ds) {
    NuisancePredictions out;
    const auto n = static_cast<Eigen::Index>(ds.n());
    const auto& x = ds.features();
    out.m0.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) out.m0[i] = pair.p0.predict(x.row(i).transpose());
    if (pair.p1) {
        out.m1.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) out.m1[i] = pair.p1->predict(x.row(i).transpose());
    }
    return out;
}

}  // namespace shadow_att
