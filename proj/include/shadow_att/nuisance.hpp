#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shadow_att/data.hpp"
#include "shadow_att/propensity.hpp"

namespace shadow_att {

/// Floor/ceiling applied to every predicted conditional mean.
inline constexpr double kPredictionFloor = 1e-6;

double clamp_probability(double p) noexcept;

enum class Arm { pooled = -1, control = 0, treated = 1 };

enum class NuisanceKind { logistic, knn, fixed };

std::string to_string(NuisanceKind kind);
NuisanceKind parse_nuisance_kind(const std::string& name);

/// A fitted estimate of E(label | x), returned clamped to [eps, 1 - eps].
class ConditionalMeanModel {
public:
    using Function = std::function<double(const VectorRef&)>;

    /// Wraps a known regression function (true nuisances, pinned models).
    static ConditionalMeanModel from_function(Arm arm, std::size_t feature_dim, Function fn);
    static ConditionalMeanModel constant(Arm arm, std::size_t feature_dim, double mean);

    double predict(const VectorRef& x) const;

    NuisanceKind kind() const noexcept { return kind_; }
    Arm arm() const noexcept { return arm_; }
    std::size_t feature_dim() const noexcept { return dim_; }

    /// Logistic coefficients, intercept first. Empty for other kinds.
    const Eigen::VectorXd& coefficients() const noexcept { return coef_; }
    std::size_t k() const noexcept { return k_; }

    const std::vector<std::string>& warnings() const noexcept { return warnings_; }
    bool separated() const noexcept { return separated_; }

    /// Sorted dataset row indices this model was trained on.
    const std::vector<std::size_t>& training_rows() const noexcept { return training_rows_; }
    bool trained_on(std::size_t row) const;
    void set_training_rows(std::vector<std::size_t> rows);

private:
    friend ConditionalMeanModel fit_logistic(const Eigen::MatrixXd&, const Eigen::VectorXd&,
                                             const Eigen::VectorXd&, Arm);
    friend ConditionalMeanModel fit_knn(const Eigen::MatrixXd&, const Eigen::VectorXd&,
                                        const Eigen::VectorXd&, std::size_t, Arm);

    struct KnnState {
        Eigen::MatrixXd points;  // standardized, one row per training point
        Eigen::VectorXd labels;
        Eigen::VectorXd weights;
        Eigen::VectorXd center;
        Eigen::VectorXd scale;
    };

    NuisanceKind kind_ = NuisanceKind::fixed;
    Arm arm_ = Arm::pooled;
    std::size_t dim_ = 0;
    Eigen::VectorXd coef_;
    std::size_t k_ = 0;
    std::shared_ptr<const KnnState> knn_;
    Function fn_;
    bool separated_ = false;
    std::vector<std::string> warnings_;
    std::vector<std::size_t> training_rows_;
};

/// Weighted IRLS logistic regression with intercept.
ConditionalMeanModel fit_logistic(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels,
                                  const Eigen::VectorXd& weights, Arm arm = Arm::pooled);

/// Weighted k-nearest-neighbour mean on standardized features; ties go to
/// the lower row index.
ConditionalMeanModel fit_knn(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels,
                             const Eigen::VectorXd& weights, std::size_t k, Arm arm = Arm::pooled);

/// ceil(n^{4/5} / 2), at least 1 and at most n.
std::size_t default_knn_k(std::size_t n);

struct NuisancePair {
    ConditionalMeanModel p0;
    std::optional<ConditionalMeanModel> p1;
};

struct NuisanceSpec {
    NuisanceKind kind = NuisanceKind::logistic;
    /// knn neighbourhood size; default_knn_k(arm size) when unset.
    std::optional<std::size_t> k;
};

/// Fits E(Y | x, T = 0) on control rows and E(Y | x, T = 1) on treated rows.
///
/// `rows` restricts training to a subset (all rows when empty); `weights`
/// is indexed by dataset row (unit weights when empty).
NuisancePair fit_nuisance_pair(const Dataset& ds, const NuisanceSpec& spec,
                               std::span<const std::size_t> rows = {},
                               std::span<const double> weights = {}, bool with_p1 = true);

/// Fits the identifiable propensity w(x) = pr(T = 1 | x) on all (selected) rows.
ConditionalMeanModel fit_treatment_model(const Dataset& ds, const NuisanceSpec& spec,
                                         std::span<const std::size_t> rows = {},
                                         std::span<const double> weights = {});

/// Fits E(Y | x, T = t) for one arm.
ConditionalMeanModel fit_arm_model(const Dataset& ds, Arm arm, const NuisanceSpec& spec,
                                   std::span<const std::size_t> rows = {},
                                   std::span<const double> weights = {});

using NuisanceFitter = std::function<NuisancePair(const Dataset&, std::span<const std::size_t> rows,
                                                  std::span<const double> weights)>;

NuisanceFitter make_fitter(const NuisanceSpec& spec, bool with_p1 = true);

/// Fitter that ignores its inputs and always returns `pair`.
NuisanceFitter pinned_fitter(NuisancePair pair);

/// Per-row predictions of the nuisance pair over a dataset.
struct NuisancePredictions {
    Eigen::VectorXd m0;
    Eigen::VectorXd m1;  // empty when the pair has no p1

    bool has_m1() const noexcept { return m1.size() > 0; }
};

NuisancePredictions predict_rows(const NuisancePair& pair, const Dataset& ds);

/// Unit weights when `weights` is empty; otherwise checks length and sign.
Eigen::VectorXd resolve_weights(std::span<const double> weights, std::size_t n);

}  // namespace shadow_att
