#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "shadow_att/crossfit.hpp"
#include "shadow_att/data.hpp"
#include "shadow_att/errors.hpp"
#include "shadow_att/estimators.hpp"
#include "shadow_att/inference.hpp"
#include "shadow_att/rng.hpp"
#include "shadow_att/simulation.hpp"

namespace shadow_att::cli {

namespace {

constexpr double kDegradedFraction = 0.10;

std::string num(double v) {
    if (std::isnan(v)) return "NA";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string join(const std::vector<std::string>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + xs[i];
    return s;
}

std::string join(const std::vector<double>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + num(xs[i]);
    return s;
}

std::string lookup_or_na(const std::map<std::string, double>& m, const std::string& key) {
    const auto it = m.find(key);
    return it == m.end() ? "NA" : num(it->second);
}

unsigned resolve_threads(unsigned t) { return t == 0 ? std::max(1u, std::thread::hardware_concurrency()) : t; }

std::filesystem::path out_path(const RunConfig& cfg, const std::string& file) {
    std::filesystem::create_directories(cfg.out);
    return std::filesystem::path(cfg.out) / file;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write '" + path.string() + "'");
    f << text;
}

/// Lines shared by every machine-readable output.
std::string replay_header(const RunConfig& cfg) {
    std::ostringstream os;
    os << "command = " << cfg.command << "\n";
    os << "seed = " << (cfg.seed ? std::to_string(*cfg.seed) : "NA") << "\n";
    os << "rng = " << kRngAlgorithm << "\n";
    os << "config_digest = " << cfg.digest() << "\n";
    return os.str();
}

NuisanceSpec nuisance_spec(const RunConfig& cfg) {
    NuisanceSpec spec;
    spec.kind = parse_nuisance_kind(cfg.nuisance);
    if (cfg.knn_k > 0) spec.k = cfg.knn_k;
    return spec;
}

ColumnMapping mapping(const RunConfig& cfg) {
    ColumnMapping m;
    m.t = cfg.t_col;
    m.y = cfg.y_col;
    m.u = cfg.u_cols;
    m.z = cfg.z_cols;
    return m;
}

std::optional<CrossfitOptions> crossfit_options(const RunConfig& cfg) {
    if (cfg.crossfit == 0) return std::nullopt;
    CrossfitOptions cf;
    cf.K = cfg.crossfit;
    cf.seed = stream_key(*cfg.seed, 0, StreamRole::folds);
    cf.threads = resolve_threads(cfg.threads);
    return cf;
}

struct Stratum {
    std::string label;
    Dataset data;
};

/// Loads, validates and optionally standardizes the data, then splits it by
/// the stratification column. A single level yields the unstratified run.
std::vector<Stratum> load_strata(const RunConfig& cfg, std::ostream& log, std::vector<std::string>& warnings) {
    Dataset ds = load_dataset(cfg.data, mapping(cfg));
    std::vector<Stratum> out;
    std::vector<double> levels;
    if (!cfg.stratify_by.empty()) levels = load_column(cfg.data, cfg.stratify_by);
    const std::set<double> distinct(levels.begin(), levels.end());
    if (distinct.size() <= 1) {
        out.push_back({"all", std::move(ds)});
    } else {
        for (double level : distinct) {
            std::vector<std::size_t> rows;
            for (std::size_t i = 0; i < levels.size(); ++i)
                if (levels[i] == level) rows.push_back(i);
            std::ostringstream label;
            label << cfg.stratify_by << "=" << level;
            out.push_back({label.str(), ds.subset(rows)});
        }
    }
    for (auto& s : out) {
        const auto report = validate(s.data);
        for (const auto& w : report.warnings) {
            warnings.push_back(s.label + ": " + w);
            log << "warning: " << s.label << ": " << w << "\n";
        }
        if (cfg.standardize) s.data = standardize(s.data);
    }
    return out;
}

PipelineOptions pipeline_options(const RunConfig& cfg) {
    PipelineOptions opts;
    opts.nuisance = nuisance_spec(cfg);
    return opts;
}

EstimateReport run_point(const Dataset& ds, const RunConfig& cfg) {
    const auto opts = pipeline_options(cfg);
    if (const auto cf = crossfit_options(cfg)) return crossfit_estimate(ds, opts, *cf);
    return estimate(ds, opts);
}

PerturbationResult run_perturbation(const Dataset& ds, const RunConfig& cfg, std::size_t stratum) {
    PerturbationConfig pc;
    pc.B = cfg.perturb;
    pc.seed = stream_key(*cfg.seed, stratum, StreamRole::perturb);
    pc.threads = resolve_threads(cfg.threads);
    auto cf = crossfit_options(cfg);
    if (cf) cf->threads = 1;
    return perturb_se(ds, make_estimate_pipeline(ds, pipeline_options(cfg), true, cf), pc);
}

bool degraded_report(const EstimateReport& rep) {
    return std::any_of(rep.warnings.begin(), rep.warnings.end(), [](const std::string& w) {
        return w.find("degenerate") != std::string::npos || w.find("singular") != std::string::npos ||
               w.find("Singular") != std::string::npos;
    });
}

std::vector<std::string> estimate_rows(const EstimateReport& rep) {
    std::vector<std::string> names;
    for (std::size_t j = 0; j < rep.theta_hat.dim(); ++j) names.push_back(theta_name(j));
    for (const char* d : {kDeltaEff, kDeltaAlt, kDeltaNv1, kDeltaNv2})
        if (rep.delta_estimates.count(d)) names.emplace_back(d);
    return names;
}

void append_estimate_table(std::ostringstream& tsv, const std::string& stratum, const EstimateReport& rep) {
    const auto point = rep.point_estimates();
    for (const auto& name : estimate_rows(rep)) {
        const double est = point.at(name);
        const auto sp = rep.se_perturb.find(name);
        const auto sa = rep.se_analytic.find(name);
        double se_test = NAN;
        if (sp != rep.se_perturb.end()) se_test = sp->second;
        else if (sa != rep.se_analytic.end()) se_test = sa->second;
        double pval = NAN;
        if (name == theta_name(1) && rep.blocks) pval = rep.wald_theta2.p_value;
        else if (std::isfinite(se_test) && se_test > 0.0) pval = two_sided_p(est / se_test);
        const auto ci = rep.ci_95.find(name);
        tsv << stratum << "\t" << name << "\t" << num(est) << "\t" << lookup_or_na(rep.se_analytic, name) << "\t"
            << lookup_or_na(rep.se_perturb, name) << "\t" << (ci == rep.ci_95.end() ? "NA" : num(ci->second.lo))
            << "\t" << (ci == rep.ci_95.end() ? "NA" : num(ci->second.hi)) << "\t" << num(pval) << "\n";
    }
}

void write_failure_diagnostics(const RunConfig& cfg, const std::string& what, double residual,
                               const std::vector<std::string>& warnings) {
    std::ostringstream kv;
    kv << replay_header(cfg);
    kv << "status = solver_failure\n";
    kv << "error = " << what << "\n";
    kv << "residual = " << num(residual) << "\n";
    for (std::size_t i = 0; i < warnings.size(); ++i) kv << "warning." << i << " = " << warnings[i] << "\n";
    write_file(out_path(cfg, "diagnostics.kv"), kv.str());
}

}  // namespace

void RunConfig::validate() const {
    static const std::set<std::string> commands{"simulate", "estimate", "perturb"};
    if (!commands.count(command)) throw ConfigError("unknown command '" + command + "'");
    const bool stochastic = command != "estimate" || crossfit > 0 || perturb > 0;
    if (stochastic && !seed) throw ConfigError("--seed is required for " + command);
    parse_nuisance_kind(nuisance);
    if (command == "simulate") {
        if (reps == 0) throw ConfigError("reps must be >= 1");
        if (n < 4) throw ConfigError("n must be >= 4");
        if (theta0.size() != 3) throw ConfigError("theta0 needs exactly 3 values");
        parse_theta_mode(theta_mode);
        if (perturb_reps > reps) throw ConfigError("perturb-reps exceeds reps");
        if (perturb == 1) throw ConfigError("perturb B must be >= 2");
        if (!data.empty() || crossfit > 0 || !stratify_by.empty())
            throw ConfigError("data, crossfit and stratify-by apply to estimate and perturb only");
        return;
    }
    if (data.empty()) throw ConfigError("--data is required for " + command);
    if (crossfit == 1) throw ConfigError("crossfit K must be 0 or >= 2");
    if (command == "perturb") {
        if (perturb == 1) throw ConfigError("perturb B must be >= 2");
        if (!stratify_by.empty()) throw ConfigError("stratify-by is supported by estimate only");
    } else if (perturb == 1) {
        throw ConfigError("perturb B must be 0 or >= 2");
    }
}

std::string RunConfig::canonical() const {
    std::ostringstream os;
    os << "command = " << command << "\n";
    os << "seed = " << (seed ? std::to_string(*seed) : "") << "\n";
    os << "nuisance = " << nuisance << "\n";
    os << "knn-k = " << knn_k << "\n";
    os << "perturb = " << perturb << "\n";
    if (command == "simulate") {
        os << "n = " << n << "\n";
        os << "reps = " << reps << "\n";
        os << "theta0 = " << join(theta0) << "\n";
        os << "theta-mode = " << theta_mode << "\n";
        os << "perturb-reps = " << perturb_reps << "\n";
    } else {
        os << "data = " << data << "\n";
        os << "t-col = " << t_col << "\n";
        os << "y-col = " << y_col << "\n";
        os << "u-cols = " << join(u_cols) << "\n";
        os << "z-cols = " << join(z_cols) << "\n";
        os << "crossfit = " << crossfit << "\n";
        os << "standardize = " << (standardize ? "true" : "false") << "\n";
        os << "stratify-by = " << stratify_by << "\n";
    }
    return os.str();
}

std::string RunConfig::digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::optional<RunConfig> parse_args(int argc, const char* const* argv, std::ostream& out) {
    RunConfig cfg;
    CLI::App app{"Efficient ATT estimation under endogenous treatment with shadow variables"};
    app.set_config("--config", "", "Flat key = value file; command-line flags override it");
    app.add_option("command", cfg.command, "simulate | estimate | perturb")->required();
    std::uint64_t seed = 0;
    auto* seed_opt = app.add_option("--seed", seed, "RNG seed");
    app.add_option("--threads", cfg.threads, "Worker threads (0 = all cores)");
    app.add_option("--out", cfg.out, "Output directory");

    app.add_option("--data", cfg.data, "Input CSV");
    app.add_option("--t-col", cfg.t_col, "Treatment column");
    app.add_option("--y-col", cfg.y_col, "Outcome column");
    app.add_option("--u-cols", cfg.u_cols, "Non-shadow covariates (comma list)")->delimiter(',');
    app.add_option("--z-cols", cfg.z_cols, "Shadow covariates (comma list)")->delimiter(',');
    app.add_option("--nuisance", cfg.nuisance, "logistic | knn");
    app.add_option("--knn-k", cfg.knn_k, "k for the knn nuisance (0 = default rule)");
    app.add_option("--crossfit", cfg.crossfit, "Folds K (0 = no cross-fitting)");
    app.add_option("--perturb", cfg.perturb, "Perturbation replicates B (0 = none)");
    app.add_flag("--standardize", cfg.standardize, "Standardize continuous covariates");
    app.add_option("--stratify-by", cfg.stratify_by, "Report per level of this column");

    app.add_option("--n", cfg.n, "Sample size per replication");
    app.add_option("--reps", cfg.reps, "Replications");
    app.add_option("--theta0", cfg.theta0, "True propensity parameters (comma list)")->delimiter(',');
    app.add_option("--theta-mode", cfg.theta_mode, "eff | truth | arb1 | arb2");
    app.add_option("--perturb-reps", cfg.perturb_reps, "Replications that get perturbation sds (0 = all)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return std::nullopt;
    } catch (const CLI::ParseError& e) {
        throw ConfigError(e.what());
    }
    if (seed_opt->count() > 0) cfg.seed = seed;
    cfg.validate();
    return cfg;
}

int cmd_simulate(const RunConfig& cfg, std::ostream& log) {
    cfg.validate();
    DgpSpec spec;
    spec.n = cfg.n;
    spec.theta0 = ThetaParams(Eigen::Vector3d(cfg.theta0[0], cfg.theta0[1], cfg.theta0[2]));
    spec.seed = *cfg.seed;

    StudyConfig sc;
    sc.reps = cfg.reps;
    sc.theta_mode = parse_theta_mode(cfg.theta_mode);
    sc.nuisance = nuisance_spec(cfg);
    sc.seed = *cfg.seed;
    sc.threads = resolve_threads(cfg.threads);
    if (cfg.perturb > 0) {
        PerturbationConfig pc;
        pc.B = cfg.perturb;
        sc.perturb = pc;
        sc.perturb_reps = cfg.perturb_reps == 0 ? cfg.reps : cfg.perturb_reps;
    }
    const SimSummary sum = run_study(spec, sc);

    std::ostringstream tsv;
    tsv << "estimator\ttruth\tcount\tmean\tbias\tsd\tmse\tse\tsd_p\tcoverage\n";
    for (const auto& name : sum.estimator_order) {
        const auto& s = sum.stats.at(name);
        tsv << name << "\t" << num(s.truth) << "\t" << s.count << "\t" << num(s.mean) << "\t" << num(s.bias) << "\t"
            << num(s.sd) << "\t" << num(s.mse) << "\t" << num(s.mean_se_analytic) << "\t" << num(s.mean_sd_p)
            << "\t" << num(s.coverage) << "\n";
    }
    write_file(out_path(cfg, "summary.tsv"), tsv.str());
    std::map<std::string, std::string> extra{{"command", cfg.command},
                                             {"seed", std::to_string(*cfg.seed)},
                                             {"rng", kRngAlgorithm},
                                             {"config_digest", cfg.digest()},
                                             {"nuisance", cfg.nuisance}};
    write_file(out_path(cfg, "summary.kv"), sum.key_values(extra));
    log << sum.table();
    for (const auto& f : sum.failures) log << "failure: " << f << "\n";
    return sum.failure_fraction() > kDegradedFraction ? kDegraded : kSuccess;
}

int cmd_estimate(const RunConfig& cfg, std::ostream& log) {
    cfg.validate();
    std::vector<std::string> warnings;
    const auto strata = load_strata(cfg, log, warnings);
    std::ostringstream tsv, kv;
    tsv << "stratum\testimator\tEst\tse\tsd_p\tci_lo\tci_hi\tp-value\n";
    kv << replay_header(cfg);
    bool degraded = false;
    for (std::size_t s = 0; s < strata.size(); ++s) {
        const auto& st = strata[s];
        EstimateReport rep;
        try {
            rep = run_point(st.data, cfg);
        } catch (const NonConvergence& e) {
            write_failure_diagnostics(cfg, st.label + ": " + e.what(), e.residual(), warnings);
            throw;
        }
        if (cfg.perturb > 0) {
            const auto pr = run_perturbation(st.data, cfg, s);
            rep.se_perturb = pr.sd;
            rep.update_intervals();
            for (const auto& w : pr.warnings) rep.warnings.push_back("perturbation: " + w);
            kv << st.label << ".perturb_failed = " << pr.failed << "\n";
            if (pr.failure_fraction() > kDegradedFraction) degraded = true;
        }
        if (degraded_report(rep)) degraded = true;
        append_estimate_table(tsv, st.label, rep);

        kv << st.label << ".n = " << st.data.n() << "\n";
        kv << st.label << ".n_treated = " << st.data.treated_count() << "\n";
        kv << st.label << ".solver_start = " << rep.solver.start << "\n";
        kv << st.label << ".solver_iterations = " << rep.solver.iterations << "\n";
        kv << st.label << ".solver_residual = " << num(rep.solver.residual) << "\n";
        kv << st.label << ".wald_theta2 = " << num(rep.wald_theta2.statistic) << "\n";
        kv << st.label << ".wald_theta2_p = " << num(rep.wald_theta2.p_value) << "\n";
        for (const auto& [name, v] : rep.point_estimates()) kv << st.label << "." << name << " = " << num(v) << "\n";
        for (const auto& w : rep.warnings) {
            warnings.push_back(st.label + ": " + w);
            log << "warning: " << st.label << ": " << w << "\n";
        }
    }
    kv << "status = " << (degraded ? "degraded" : "ok") << "\n";
    for (std::size_t i = 0; i < warnings.size(); ++i) kv << "warning." << i << " = " << warnings[i] << "\n";
    write_file(out_path(cfg, "estimate.tsv"), tsv.str());
    write_file(out_path(cfg, "estimate.kv"), kv.str());
    log << tsv.str();
    return degraded ? kDegraded : kSuccess;
}

int cmd_perturb(const RunConfig& cfg, std::ostream& log) {
    RunConfig local = cfg;
    if (local.perturb == 0) local.perturb = PerturbationConfig{}.B;
    local.validate();
    std::vector<std::string> warnings;
    const auto strata = load_strata(local, log, warnings);
    const Dataset& ds = strata.front().data;
    PerturbationResult pr;
    try {
        pr = run_perturbation(ds, local, 0);
    } catch (const PipelineFailure& e) {
        write_failure_diagnostics(local, e.what(), NAN, warnings);
        throw;
    }

    std::ostringstream tsv, trace, kv;
    tsv << "estimator\tEst\tsd_p\tci_lo\tci_hi\tp-value\n";
    for (const auto& name : pr.targets) {
        const double est = pr.point.at(name);
        const double sd = pr.sd.at(name);
        const auto& ci = pr.ci_95.at(name);
        tsv << name << "\t" << num(est) << "\t" << num(sd) << "\t" << num(ci.lo) << "\t" << num(ci.hi) << "\t"
            << num(sd > 0.0 ? two_sided_p(est / sd) : NAN) << "\n";
    }
    trace << "b";
    for (const auto& name : pr.targets) trace << "\t" << name;
    trace << "\n";
    for (std::size_t b = 0; b < local.perturb; ++b) {
        trace << (b + 1);
        for (const auto& name : pr.targets) trace << "\t" << num(pr.trace.at(name)[b]);
        trace << "\n";
    }
    kv << replay_header(local);
    kv << "B = " << local.perturb << "\n";
    kv << "failed = " << pr.failed << "\n";
    for (const auto& name : pr.targets) {
        kv << name << ".est = " << num(pr.point.at(name)) << "\n";
        kv << name << ".sd_p = " << num(pr.sd.at(name)) << "\n";
    }
    for (const auto& w : pr.warnings) warnings.push_back(w);
    for (std::size_t i = 0; i < warnings.size(); ++i) kv << "warning." << i << " = " << warnings[i] << "\n";
    write_file(out_path(local, "perturb.tsv"), tsv.str());
    write_file(out_path(local, "trace.tsv"), trace.str());
    write_file(out_path(local, "perturb.kv"), kv.str());
    log << tsv.str();
    return pr.failure_fraction() > kDegradedFraction ? kDegraded : kSuccess;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    try {
        const auto cfg = parse_args(argc, argv, out);
        if (!cfg) return kSuccess;
        if (cfg->command == "simulate") return cmd_simulate(*cfg, out);
        if (cfg->command == "estimate") return cmd_estimate(*cfg, out);
        return cmd_perturb(*cfg, out);
    } catch (const NonConvergence& e) {
        err << "solver failure: " << e.what() << " (residual " << num(e.residual()) << ")\n";
        return kSolverFailure;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigOrData;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kConfigOrData;
    } catch (const PreconditionFailure& e) {
        err << "data error: " << e.what() << "\n";
        return kConfigOrData;
    } catch (const InfeasibleStratification& e) {
        err << "data error: " << e.what() << "\n";
        return kConfigOrData;
    } catch (const EmptyTrainingSet& e) {
        err << "data error: " << e.what() << "\n";
        return kConfigOrData;
    } catch (const Error& e) {
        err << "solver failure: " << e.what() << "\n";
        return kSolverFailure;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigOrData;
    }
}

}  // namespace shadow_att::cli
