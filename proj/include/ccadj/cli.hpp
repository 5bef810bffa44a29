#pragma once

// The ccadj command-line tool: theory, fit, simulate, misspec.
//
// Exit codes: 0 success, 1 numeric or runtime failure, 2 usage error,
// 3 some requested fit methods failed.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ccadj/asymptotics.hpp"
#include "ccadj/error.hpp"
#include "ccadj/estimators.hpp"
#include "ccadj/io.hpp"
#include "ccadj/simulate.hpp"

#ifndef CCADJ_VERSION
#define CCADJ_VERSION "0.1.0"
#endif

namespace ccadj::cli {

enum ExitCode : int { kOk = 0, kRuntime = 1, kUsage = 2, kPartial = 3 };

inline std::vector<Method> parse_methods(const std::string& spec) {
    std::vector<Method> out;
    for (const auto& name : io::split(spec, ',')) {
        const auto m = parse_method(name);
        if (!m) throw io::InputError("unknown method '" + name + "' (expected mar, adj, adjcon)");
        for (Method seen : out)
            if (seen == *m) throw io::InputError("method '" + name + "' listed twice");
        out.push_back(*m);
    }
    if (out.empty()) throw io::InputError("--methods is empty");
    return out;
}

inline bool has_method(const std::vector<Method>& ms, Method m) {
    for (Method x : ms)
        if (x == m) return true;
    return false;
}

namespace detail {

inline void add_config(CLI::App* sub) {
    // consumed by expand_config before parsing; registered here for --help
    sub->add_option("--config")->description("key=value file of option values; command-line flags take precedence");
}

/// Drops keys that cannot be read back: empty values and the config path itself.
inline std::string resolved_options(const CLI::App* sub) {
    std::istringstream in(sub->config_to_str(true, false));
    std::string out, line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = io::trim(line.substr(0, eq));
        const std::string value = io::trim(line.substr(eq + 1));
        if (key == "config" || value == "\"\"" || value == "[]") continue;
        out += line + "\n";
    }
    return out;
}

/// Shared truth-parameter flags.
struct TruthFlags {
    double beta = 1.0, gamma = 0.3, theta = 0.4, pi = 0.5;
    double f = 0.3;
    double alpha = 0.0;
    CLI::Option* alpha_opt = nullptr;

    void attach(CLI::App* sub, bool with_intercept) {
        sub->add_option("--beta", beta, "log odds ratio of the covariate X")->capture_default_str();
        sub->add_option("--gamma", gamma, "log odds ratio of the exposure E")->capture_default_str();
        sub->add_option("--theta", theta, "pr(X=1)")->capture_default_str();
        sub->add_option("--pi", pi, "pr(E=1)")->capture_default_str();
        if (with_intercept) {
            sub->add_option("--f", f, "outcome prevalence; the intercept is solved from it")->capture_default_str();
            alpha_opt = sub->add_option("--alpha", alpha, "intercept; overrides --f when given");
        }
    }

    PopulationParams params() const {
        PopulationParams p{0.0, beta, gamma, theta, pi};
        if (alpha_opt && alpha_opt->count() > 0) {
            p.alpha = alpha;
        } else {
            if (!(f > 0.0 && f < 1.0)) throw io::InputError("--f must lie in (0,1)");
            p.alpha = alpha_from_prevalence(f, beta, gamma, theta, pi);
        }
        p.validate();
        return p;
    }
};

inline void write_manifest(const CLI::App* sub, const std::string& command, const std::string& started,
                           const std::vector<std::string>& outputs) {
    io::Manifest m;
    m.command = command;
    m.version = CCADJ_VERSION;
    m.started = started;
    m.finished = io::utc_timestamp();
    m.outputs = outputs;
    m.resolved = resolved_options(sub);
    m.write(outputs.front() + ".manifest");
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io::InputError("cannot write '" + path + "'");
    return os;
}

} // namespace detail

// ============================================================================
// theory
// ============================================================================

struct TheoryCommand {
    detail::TruthFlags truth;
    double nu = 1.0, n = 5e4, level = 0.05;
    std::string grid = "0.01:0.99:99";
    std::string out = "theory.csv";
    CLI::App* sub = nullptr;

    void attach(CLI::App& app) {
        sub = app.add_subcommand("theory", "asymptotic bias, variances, power and efficiencies over a prevalence grid");
        truth.attach(sub, false);
        sub->add_option("--nu", nu, "cases per control")->capture_default_str();
        sub->add_option("--n", n, "total sample size for power")->capture_default_str();
        sub->add_option("--level", level, "two-sided test size")->capture_default_str();
        sub->add_option("--f-grid", grid, "prevalence grid min:max:points")->capture_default_str();
        sub->add_option("--out", out, "output CSV")->capture_default_str();
        detail::add_config(sub);
    }

    int run(std::ostream& os, std::ostream& err) {
        const std::string started = io::utc_timestamp();
        const std::vector<double> fs = io::parse_range(grid);
        if (!(nu > 0.0) || !(n > 0.0) || !(level > 0.0 && level < 1.0)) {
            throw io::InputError("--nu and --n must be positive and --level in (0,1)");
        }
        for (double f : fs)
            if (!(f > 0.0 && f < 1.0)) throw io::InputError("--f-grid values must lie in (0,1)");
        CurveInputs in{truth.beta, truth.gamma, truth.theta, truth.pi, nu, n, level};
        PopulationParams{0.0, in.beta, in.gamma, in.theta, in.pi}.validate();

        std::vector<PowerPoint> rows;
        for (double f : fs) {
            try {
                rows.push_back(theory_point(f, in));
            } catch (const Error& e) {
                err << "ccadj theory: numeric failure at f=" << io::fmt(f) << ": " << e.what() << "\n";
                return kRuntime;
            }
        }

        auto file = detail::open_output(out);
        io::CsvWriter w(file);
        w.row({"f", "alpha", "delta", "gamma_plus_delta", "sigma2_M", "sigma2_A", "sigma2_AC", "power_M", "power_A",
               "power_AC", "eP_M_A", "eP_M_AC", "f_star", "alpha_star"});
        for (const auto& r : rows) {
            w << r.f << r.alpha << r.delta << r.gamma_plus_delta << r.sigma2_M << r.sigma2_A << r.sigma2_AC
              << r.power_mar << r.power_adj << r.power_adjcon << r.ep_M_vs_A << r.ep_M_vs_AC << r.f_star
              << r.alpha_star;
            w.end();
        }
        file.close();
        detail::write_manifest(sub, "theory", started, {out});
        os << "theory: " << rows.size() << " prevalence points written to " << out << "\n";
        return kOk;
    }
};

// ============================================================================
// fit
// ============================================================================

struct FitCommand {
    std::vector<std::string> cells;
    std::string counts_file, subjects_file;
    double prevalence = 0.0;
    CLI::Option* prevalence_opt = nullptr;
    CLI::Option* methods_opt = nullptr;
    std::string methods = "mar,adj,adjcon";
    double level = 0.05;
    bool continuity = false;
    std::string variance = "observed";
    bool misspecified = false;
    std::string out;
    CLI::App* sub = nullptr;

    void attach(CLI::App& app) {
        sub = app.add_subcommand("fit", "fit Mar, Adj and AdjCon to one case-control table");
        auto* c = sub->add_option("--cell", cells, "cell as d,i,j,count (D=d, X=i, E=j); give all eight");
        c->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)->allow_extra_args(false);
        auto* cf = sub->add_option("--counts-file", counts_file, "CSV with columns d,i,j,count");
        auto* sf = sub->add_option("--subjects-file", subjects_file, "CSV with one row per subject, columns d,x,e");
        c->excludes(cf)->excludes(sf);
        cf->excludes(sf);
        prevalence_opt = sub->add_option("--prevalence", prevalence, "known prevalence f, required for adjcon");
        methods_opt = sub->add_option("--methods", methods,
                                      "comma list of mar, adj, adjcon (default: all, adjcon only with --prevalence)");
        sub->add_option("--level", level, "two-sided test size")->capture_default_str();
        sub->add_flag("--continuity", continuity, "add 0.5 to the collapsed cells for Mar");
        sub->add_option("--variance", variance, "AdjCon information: observed or expected")
            ->check(CLI::IsMember({"observed", "expected"}))
            ->capture_default_str();
        sub->add_flag("--misspecified", misspecified, "also report the sandwich standard error for AdjCon");
        sub->add_option("--out", out, "optional CSV of the per-method results");
        detail::add_config(sub);
    }

    CaseControlTable load() const {
        if (!cells.empty()) return io::table_from_cells(cells);
        if (!counts_file.empty()) return io::read_counts_file(counts_file);
        if (!subjects_file.empty()) return io::read_subjects_file(subjects_file);
        throw io::InputError("give the table with --cell, --counts-file or --subjects-file");
    }

    int run(std::ostream& os, std::ostream& err) {
        const std::string started = io::utc_timestamp();
        const bool have_f = prevalence_opt->count() > 0;
        std::vector<Method> ms;
        if (methods_opt->count() > 0) {
            ms = parse_methods(methods);
        } else {
            ms = have_f ? std::vector<Method>{Method::Mar, Method::Adj, Method::AdjCon}
                        : std::vector<Method>{Method::Mar, Method::Adj};
        }
        if (has_method(ms, Method::AdjCon) && !have_f) {
            throw io::InputError("adjcon needs --prevalence");
        }
        if (have_f && !(prevalence > 0.0 && prevalence < 1.0)) throw io::InputError("--prevalence must lie in (0,1)");
        if (!(level > 0.0 && level < 1.0)) throw io::InputError("--level must lie in (0,1)");
        const CaseControlTable table = load();

        struct Row {
            Method m;
            std::optional<FitResult> fit;
            std::optional<TestResult> test;
            std::string error;
        };
        std::vector<Row> rows;
        for (Method m : ms) {
            Row r{m, std::nullopt, std::nullopt, {}};
            try {
                switch (m) {
                case Method::Mar: r.fit = fit_marginal(table, MarginalOptions{continuity}); break;
                case Method::Adj: r.fit = fit_adjusted(table); break;
                case Method::AdjCon: {
                    ConstrainedOptions opt;
                    opt.variance = variance == "expected" ? VarianceKind::Expected : VarianceKind::Observed;
                    opt.possibly_misspecified = misspecified;
                    r.fit = fit_constrained(table, prevalence, opt);
                    break;
                }
                }
                r.test = wald_test(*r.fit, level);
            } catch (const Error& e) {
                r.error = e.what();
            }
            rows.push_back(std::move(r));
        }

        char buf[256];
        std::snprintf(buf, sizeof buf, "%-7s %13s %12s %9s %11s %s\n", "method", "gamma", "se", "z", "p", "status");
        os << buf;
        bool any_failed = false;
        for (const auto& r : rows) {
            if (r.fit) {
                std::snprintf(buf, sizeof buf, "%-7s %13.6g %12.6g %9.4g %11.4g %s%s\n",
                              std::string(to_string(r.m)).c_str(), r.fit->gamma_hat, r.fit->se_gamma, r.test->z,
                              r.test->p_value, r.fit->converged ? "converged" : "not converged",
                              r.fit->continuity_corrected ? " (continuity corrected)" : "");
                os << buf;
                if (r.fit->robust_cov) {
                    os << "        sandwich se " << std::sqrt((*r.fit->robust_cov)(1, 1)) << "\n";
                }
            } else {
                any_failed = true;
                os << std::string(to_string(r.m)) << "  failed: " << r.error << "\n";
                err << "ccadj fit: " << to_string(r.m) << " failed: " << r.error << "\n";
            }
        }

        if (!out.empty()) {
            auto file = detail::open_output(out);
            io::CsvWriter w(file);
            w.row({"method", "gamma", "se", "z", "p_value", "reject", "level", "converged", "iterations", "loglik",
                   "robust_se", "error"});
            const double nan = std::numeric_limits<double>::quiet_NaN();
            for (const auto& r : rows) {
                w << to_string(r.m);
                if (r.fit) {
                    const double robust = r.fit->robust_cov ? std::sqrt((*r.fit->robust_cov)(1, 1)) : nan;
                    w << r.fit->gamma_hat << r.fit->se_gamma << r.test->z << r.test->p_value
                      << (r.test->reject ? 1 : 0) << level << (r.fit->converged ? 1 : 0) << r.fit->iterations
                      << r.fit->loglik << robust << "";
                } else {
                    w << nan << nan << nan << nan << 0 << level << 0 << 0 << nan << nan << r.error;
                }
                w.end();
            }
            file.close();
            detail::write_manifest(sub, "fit", started, {out});
        }
        return any_failed ? kPartial : kOk;
    }
};

// ============================================================================
// simulate
// ============================================================================

struct SimulateCommand {
    detail::TruthFlags truth;
    double nu = 1.0, n = 2e4, level = 0.05;
    int replicates = 1000;
    std::uint64_t seed = 1;
    std::string methods = "mar,adj,adjcon";
    double adjcon_f = 0.0;
    CLI::Option* adjcon_f_opt = nullptr;
    std::string failures = "no-reject";
    bool emit_expected = false;
    std::string out = "simulate.csv";
    CLI::App* sub = nullptr;

    void attach(CLI::App& app) {
        sub = app.add_subcommand("simulate", "Monte-Carlo calibration against the asymptotic theory");
        truth.attach(sub, true);
        sub->add_option("--nu", nu, "cases per control")->capture_default_str();
        sub->add_option("--n", n, "total subjects per replicate")->capture_default_str();
        sub->add_option("--level", level, "two-sided test size")->capture_default_str();
        sub->add_option("--replicates", replicates, "number of replicates")->capture_default_str();
        sub->add_option("--seed", seed, "random seed")->capture_default_str();
        sub->add_option("--methods", methods, "comma list of mar, adj, adjcon")->capture_default_str();
        adjcon_f_opt = sub->add_option("--adjcon-f", adjcon_f, "prevalence handed to AdjCon (default: the true f)");
        sub->add_option("--failure-convention", failures,
                        "how failed replicates enter rejection rates: no-reject or exclude")
            ->check(CLI::IsMember({"no-reject", "exclude"}))
            ->capture_default_str();
        sub->add_flag("--emit-expected", emit_expected, "write the exact expected table n*p instead of sampling");
        sub->add_option("--out", out, "output CSV")->capture_default_str();
        detail::add_config(sub);
    }

    int run(std::ostream& os, std::ostream& err) {
        const std::string started = io::utc_timestamp();
        SimConfig cfg;
        cfg.params = truth.params();
        cfg.design = DesignParams{nu, n};
        cfg.design.validate();
        if (emit_expected) {
            const CaseControlTable t = expected_table(cfg.params, cfg.design);
            auto file = detail::open_output(out);
            io::write_counts(file, t);
            file.close();
            detail::write_manifest(sub, "simulate", started, {out});
            os << "simulate: expected table at f=" << io::fmt(cfg.params.prevalence()) << " written to " << out
               << "\n";
            return kOk;
        }
        if (n != std::floor(n)) throw io::InputError("--n must be a whole number when sampling");
        cfg.replicates = replicates;
        cfg.seed = seed;
        cfg.level = level;
        cfg.methods = parse_methods(methods);
        if (adjcon_f_opt->count() > 0) cfg.f_supplied = adjcon_f;
        cfg.failures = failures == "exclude" ? FailureConvention::Exclude : FailureConvention::NoReject;
        cfg.validate();

        MCReport rep;
        try {
            rep = run_mc(cfg);
        } catch (const Error& e) {
            err << "ccadj simulate: " << e.what() << " (replicates=" << replicates << ", seed=" << seed << ")\n";
            return kRuntime;
        }

        auto file = detail::open_output(out);
        io::CsvWriter w(file);
        w.row({"method", "replicates", "included", "failed", "failures", "mean_gamma", "mean_gamma_mcse",
               "sd_root_n", "sd_root_n_mcse", "mean_se_root_n", "mean_se_root_n_mcse", "reject_rate",
               "reject_rate_mcse", "coverage", "coverage_mcse", "theory_limit", "theory_sigma", "theory_power",
               "true_gamma", "delta", "f_true", "f_adjcon", "n", "nu", "level", "seed"});
        for (const auto& s : rep.methods) {
            std::string fails;
            for (const auto& [kind, count] : s.failures) {
                if (!fails.empty()) fails += ";";
                fails += std::string(to_string(kind)) + ":" + std::to_string(count);
            }
            w << to_string(s.method) << s.attempted << s.included << s.failed() << fails << s.mean_gamma
              << s.mean_gamma_mcse << s.sd_root_n << s.sd_root_n_mcse << s.mean_se_root_n << s.mean_se_root_n_mcse
              << s.reject_rate << s.reject_rate_mcse << s.coverage << s.coverage_mcse << s.theory_limit
              << s.theory_sigma << s.theory_power << cfg.params.gamma << rep.delta << rep.true_f << cfg.adjcon_f()
              << n << nu << level << std::to_string(seed);
            w.end();
        }
        file.close();
        detail::write_manifest(sub, "simulate", started, {out});

        char buf[256];
        std::snprintf(buf, sizeof buf, "%-7s %9s %10s %10s %10s %10s %8s %8s\n", "method", "included", "mean",
                      "limit", "sd*rt(n)", "sigma", "reject", "power");
        os << buf;
        for (const auto& s : rep.methods) {
            std::snprintf(buf, sizeof buf, "%-7s %9d %10.5f %10.5f %10.4f %10.4f %8.4f %8.4f\n",
                          std::string(to_string(s.method)).c_str(), s.included, s.mean_gamma, s.theory_limit,
                          s.sd_root_n, s.theory_sigma, s.reject_rate, s.theory_power);
            os << buf;
        }
        os << "written to " << out << "\n";
        return kOk;
    }
};

// ============================================================================
// misspec
// ============================================================================

struct MisspecCommand {
    detail::TruthFlags truth;
    double nu = 1.0;
    double epsilon = 1e-3;
    std::string f1_list, f1_grid;
    std::vector<long long> mc_confirm;
    std::uint64_t seed = 1;
    std::string out = "misspec.csv";
    CLI::App* sub = nullptr;

    void attach(CLI::App& app) {
        sub = app.add_subcommand("misspec", "limiting AdjCon estimates and sandwich covariance under a wrong prevalence");
        truth.attach(sub, true);
        sub->add_option("--nu", nu, "cases per control")->capture_default_str();
        sub->add_option("--epsilon", epsilon, "largest usable f1 is 1 - epsilon")->capture_default_str();
        auto* list = sub->add_option("--f1", f1_list, "comma list of supplied prevalences f1");
        auto* grid = sub->add_option("--f1-grid", f1_grid, "f1 grid min:max:points");
        list->excludes(grid);
        sub->add_option("--mc-confirm", mc_confirm, "also fit AdjCon on sampled tables: N REPLICATES")
            ->expected(2);
        sub->add_option("--seed", seed, "random seed for --mc-confirm")->capture_default_str();
        sub->add_option("--out", out, "output CSV")->capture_default_str();
        detail::add_config(sub);
    }

    std::vector<double> grid(double f0) const {
        if (!f1_list.empty()) return io::parse_list(f1_list);
        if (!f1_grid.empty()) return io::parse_range(f1_grid);
        std::vector<double> g;
        for (double d : {-0.1, -0.05, -0.025, -0.0125, 0.0, 0.0125, 0.025, 0.05, 0.1}) {
            if (f0 + d > 0.0 && f0 + d <= 1.0 - epsilon) g.push_back(f0 + d);
        }
        return g;
    }

    int run(std::ostream& os, std::ostream& err) {
        const std::string started = io::utc_timestamp();
        const PopulationParams p = truth.params();
        const DesignParams design{nu, 1.0};
        design.validate();
        if (!(epsilon > 0.0 && epsilon < 1.0)) throw io::InputError("--epsilon must lie in (0,1)");
        MisspecOptions opt;
        opt.epsilon = epsilon;
        opt.seed = seed;
        if (!mc_confirm.empty()) {
            if (mc_confirm.size() != 2 || mc_confirm[0] < 2 || mc_confirm[1] < 1) {
                throw io::InputError("--mc-confirm takes N >= 2 and REPLICATES >= 1");
            }
            opt.mc_n = mc_confirm[0];
            opt.mc_replicates = static_cast<int>(mc_confirm[1]);
        }
        const double f0 = p.prevalence();
        const std::vector<double> fs = grid(f0);

        MisspecReport rep;
        try {
            rep = misspec_sweep(p, design, fs, opt);
        } catch (const Error& e) {
            err << "ccadj misspec: reference point f0=" << io::fmt(f0) << " failed: " << e.what() << "\n";
            return kRuntime;
        }

        auto file = detail::open_output(out);
        io::CsvWriter w(file);
        w.row({"f1", "f0", "beta_star", "gamma_star", "theta_star", "pi_star", "alpha_star", "expected_loglik",
               "sandwich_gamma_gamma", "dev_s", "dev_sigma", "ratio_s", "ratio_sigma", "mc_n", "mc_included",
               "mc_mean_gamma", "mc_mean_gamma_mcse", "error"});
        const double nan = std::numeric_limits<double>::quiet_NaN();
        int failed = 0;
        for (const auto& r : rep.rows) {
            w << r.f1 << f0;
            if (r.limit) {
                const auto& s = r.limit->s_star;
                w << s(0) << s(1) << s(2) << s(3) << r.limit->alpha_star << r.limit->expected_loglik
                  << r.limit->sandwich(1, 1) << r.dev_s << r.dev_sigma << r.ratio_s << r.ratio_sigma;
            } else {
                ++failed;
                for (int k = 0; k < 11; ++k) w << nan;
                err << "ccadj misspec: f1=" << io::fmt(r.f1) << ": " << r.error << "\n";
            }
            w << static_cast<long long>(opt.mc_n) << r.mc_included << r.mc_mean_gamma << r.mc_mean_gamma_mcse
              << r.error;
            w.end();
        }
        file.close();
        detail::write_manifest(sub, "misspec", started, {out});
        os << "misspec: " << rep.rows.size() << " rows (" << failed << " failed) at f0=" << io::fmt(f0)
           << " written to " << out << "\n";
        return failed > 0 ? kRuntime : kOk;
    }
};

// ============================================================================
// Entry point
// ============================================================================

/// Splices `--config FILE` into the argument list: each key=value becomes
/// --key=value placed right after the subcommand, so explicit flags, which come
/// later, win. Keys under another section (manifest.*) are skipped.
inline std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::vector<std::string> out;
    std::string path;
    std::size_t command_at = 0;
    for (std::size_t k = 0; k < args.size(); ++k) {
        const std::string& a = args[k];
        if (command_at == 0 && k > 0 && !a.empty() && a[0] != '-') command_at = out.size();
        if (a == "--config") {
            if (k + 1 >= args.size()) throw CLI::ArgumentMismatch("--config needs a file name");
            path = args[++k];
            continue;
        }
        if (a.rfind("--config=", 0) == 0) {
            path = a.substr(9);
            continue;
        }
        out.push_back(a);
    }
    if (path.empty()) return out;
    if (command_at == 0) throw CLI::ArgumentMismatch("--config must follow a subcommand");
    const std::string command = out[command_at];

    std::vector<std::string> injected;
    for (const CLI::ConfigItem& item : CLI::ConfigTOML().from_file(path)) {
        if (item.name == "++" || item.name == "--") continue;
        if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == command)) continue;
        if (item.name == "config") continue;
        bool all_empty = true;
        for (const auto& v : item.inputs) all_empty = all_empty && v.empty();
        if (all_empty) continue;
        if (item.inputs.size() == 1) {
            injected.push_back("--" + item.name + "=" + item.inputs[0]);
        } else {
            injected.push_back("--" + item.name);
            injected.insert(injected.end(), item.inputs.begin(), item.inputs.end());
        }
    }
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(command_at) + 1, injected.begin(), injected.end());
    return out;
}

inline int run(int argc, const char* const* argv, std::ostream& os = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Case-control estimation of an exposure odds ratio with a non-confounding covariate", "ccadj"};
    app.set_version_flag("--version", std::string(CCADJ_VERSION));
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    TheoryCommand theory;
    FitCommand fit;
    SimulateCommand simulate;
    MisspecCommand misspec;
    theory.attach(app);
    fit.attach(app);
    simulate.attach(app);
    misspec.attach(app);

    try {
        std::vector<std::string> args = expand_config(std::vector<std::string>(argv, argv + argc));
        // CLI11 takes the arguments reversed, program name excluded
        std::reverse(args.begin(), args.end());
        args.pop_back();
        app.parse(std::move(args));
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, os, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, os, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, os, err);
    } catch (const CLI::ParseError& e) {
        err << "ccadj: " << e.what() << "\n";
        return kUsage;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        if (command == "theory") return theory.run(os, err);
        if (command == "fit") return fit.run(os, err);
        if (command == "simulate") return simulate.run(os, err);
        return misspec.run(os, err);
    } catch (const io::InputError& e) {
        err << "ccadj " << command << ": " << e.what() << "\n";
        return kUsage;
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::InvalidParams) {
            err << "ccadj " << command << ": " << e.what() << "\n";
            return kUsage;
        }
        err << "ccadj " << command << ": " << e.what() << "\n";
        return kRuntime;
    } catch (const std::exception& e) {
        err << "ccadj " << command << ": " << e.what() << "\n";
        return kRuntime;
    }
}

} // namespace ccadj::cli
