#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace shadow_att {

/// One subject: treatment, observed (binary) outcome, non-shadow covariates u
/// and shadow covariates z.
struct Observation {
    int t = 0;
    int y = 0;
    Eigen::VectorXd u;
    Eigen::VectorXd z;

    /// x = (u, z)
    Eigen::VectorXd features() const;
};

/// Which CSV columns play which role.
struct ColumnMapping {
    std::string t = "t";
    std::string y = "y";
    std::vector<std::string> u;
    std::vector<std::string> z;
};

/// Immutable, validated collection of observations with a fixed (p, q) layout.
///
/// Both arms are not required here; `validate` reports a missing arm and the
/// estimators refuse to run without one.
class Dataset {
public:
    Dataset(std::vector<Observation> rows, std::vector<std::string> u_names,
            std::vector<std::string> z_names);

    std::size_t n() const noexcept { return rows_.size(); }
    std::size_t p() const noexcept { return u_names_.size(); }
    std::size_t q() const noexcept { return z_names_.size(); }
    /// Number of propensity parameters, 2 + p.
    std::size_t theta_dim() const noexcept { return 2 + p(); }

    const Observation& operator[](std::size_t i) const { return rows_[i]; }
    const std::vector<Observation>& rows() const noexcept { return rows_; }
    const std::vector<std::string>& u_names() const noexcept { return u_names_; }
    const std::vector<std::string>& z_names() const noexcept { return z_names_; }

    /// n x (p + q) matrix whose row i is x_i = (u_i, z_i).
    const Eigen::MatrixXd& features() const noexcept { return features_; }

    std::size_t treated_count() const noexcept { return treated_; }
    std::size_t control_count() const noexcept { return n() - treated_; }

    /// Rows at `indices`, in the given order.
    Dataset subset(std::span<const std::size_t> indices) const;

private:
    std::vector<Observation> rows_;
    std::vector<std::string> u_names_;
    std::vector<std::string> z_names_;
    Eigen::MatrixXd features_;
    std::size_t treated_ = 0;
};

struct ValidationReport {
    std::size_t n_control = 0;
    std::size_t n_treated = 0;
    /// Number of distinct observed outcome values (l).
    std::size_t outcome_support = 0;
    /// Product of distinct levels over z columns (m); empty when any z column
    /// is continuous.
    std::optional<std::size_t> shadow_support;
    bool completeness_heuristic_pass = false;
    std::vector<std::string> warnings;

    std::string shadow_support_label() const;
};

/// Columns with more than this many distinct values count as continuous.
inline constexpr std::size_t kContinuousLevelThreshold = 10;

/// Arms with fewer rows than this are flagged by validate.
inline constexpr std::size_t kSmallArm = 10;

Dataset load_dataset(const std::string& path, const ColumnMapping& mapping);

/// Parses the same CSV dialect from an in-memory string.
Dataset parse_dataset(const std::string& csv_text, const ColumnMapping& mapping);

/// Reads one numeric column (e.g. a stratification variable) in file order.
std::vector<double> load_column(const std::string& path, const std::string& column);

/// Writes t, y, u..., z... with shortest round-trip float formatting.
void write_dataset(const Dataset& ds, const std::string& path);
std::string format_dataset(const Dataset& ds);

ValidationReport validate(const Dataset& ds);

/// Centers and scales every continuous u/z column to unit sample sd.
Dataset standardize(const Dataset& ds);

}  // namespace shadow_att
