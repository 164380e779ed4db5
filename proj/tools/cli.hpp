#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace shadow_att::cli {

enum ExitCode : int { kSuccess = 0, kConfigOrData = 1, kDegraded = 2, kSolverFailure = 3 };

/// Every option of every subcommand. Keys in a config file use the long
/// flag names without dashes prefix (e.g. `t-col = treat`).
struct RunConfig {
    std::string command;  ///< simulate | estimate | perturb
    std::optional<std::uint64_t> seed;
    unsigned threads = 0;  ///< 0 = all cores
    std::string out = ".";

    // estimate / perturb
    std::string data;
    std::string t_col = "t";
    std::string y_col = "y";
    std::vector<std::string> u_cols;
    std::vector<std::string> z_cols;
    std::string nuisance = "logistic";
    std::size_t knn_k = 0;  ///< 0 = default rule
    std::size_t crossfit = 0;
    std::size_t perturb = 0;
    bool standardize = false;
    std::string stratify_by;

    // simulate
    std::size_t n = 600;
    std::size_t reps = 500;
    std::vector<double> theta0{0.3, -0.3, -0.25};
    std::string theta_mode = "eff";
    std::size_t perturb_reps = 0;

    /// Throws ConfigError on inconsistent settings.
    void validate() const;
    /// Canonical `key = value` dump of every setting that affects results.
    std::string canonical() const;
    /// FNV-1a 64 of canonical(), as 16 hex digits.
    std::string digest() const;
};

/// Parses command-line arguments (and the optional --config file).
/// Throws ConfigError on invalid input; returns nullopt after --help.
std::optional<RunConfig> parse_args(int argc, const char* const* argv, std::ostream& out);

int cmd_simulate(const RunConfig& cfg, std::ostream& log);
int cmd_estimate(const RunConfig& cfg, std::ostream& log);
int cmd_perturb(const RunConfig& cfg, std::ostream& log);

/// Parses, dispatches and maps errors to exit codes.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace shadow_att::cli
