#pragma once

// Monte-Carlo engine for retrospective sampling plus the deterministic
// expected-log-likelihood maximizer used for misspecified prevalence.
//
// Every replicate owns its own generator, keyed by (seed, stream, replicate),
// and results are folded in replicate order, so output does not depend on how
// many threads ran it.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/binomial.hpp>

#include "ccadj/asymptotics.hpp"
#include "ccadj/error.hpp"
#include "ccadj/estimators.hpp"
#include "ccadj/likelihood.hpp"
#include "ccadj/model.hpp"
#include "ccadj/numeric.hpp"
#include "ccadj/table.hpp"

namespace ccadj {

// ============================================================================
// Threads
// ============================================================================

/// CCADJ_THREADS if set to a positive integer, else hardware concurrency.
inline unsigned thread_count() {
    if (const char* env = std::getenv("CCADJ_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(k) for k in [0, count) on up to `threads` workers. body must not throw.
template <class Body>
void parallel_for(std::size_t count, Body&& body, unsigned threads = thread_count()) {
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
    if (threads <= 1) {
        for (std::size_t k = 0; k < count; ++k) body(k);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t k = next++; k < count; k = next++) body(k);
        });
    }
    for (auto& th : pool) th.join();
}

// ============================================================================
// Sampling
// ============================================================================

/// Generator for one replicate; std::seed_seq and mt19937_64 are fully
/// specified by the standard, so streams are portable.
class ReplicateRng {
public:
    ReplicateRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t replicate) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                          static_cast<std::uint32_t>(replicate), static_cast<std::uint32_t>(replicate >> 32)};
        engine_.seed(seq);
    }

    /// Uniform on the open interval (0,1), 53-bit resolution.
    double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

    /// Binomial(n, p) by inversion of the exact cdf.
    std::int64_t binomial(std::int64_t n, double p) {
        const double u = uniform();
        if (n <= 0 || p <= 0.0) return 0;
        if (p >= 1.0) return n;
        using Policy = boost::math::policies::policy<
            boost::math::policies::discrete_quantile<boost::math::policies::integer_round_up>>;
        const boost::math::binomial_distribution<double, Policy> dist(static_cast<double>(n), p);
        const double k = boost::math::quantile(dist, u);
        return std::clamp<std::int64_t>(static_cast<std::int64_t>(k), 0, n);
    }

    /// Multinomial by sequential conditional binomials.
    template <std::size_t K>
    std::array<std::int64_t, K> multinomial(std::int64_t n, const std::array<double, K>& prob) {
        std::array<std::int64_t, K> out{};
        double rest = 1.0;
        std::int64_t left = n;
        for (std::size_t k = 0; k + 1 < K; ++k) {
            const double q = rest > 0.0 ? std::clamp(prob[k] / rest, 0.0, 1.0) : 0.0;
            out[k] = binomial(left, q);
            left -= out[k];
            rest -= prob[k];
        }
        out[K - 1] = left;
        return out;
    }

private:
    std::mt19937_64 engine_;
};

/// Integer case and control counts for a design: cases = round(n nu / (1 + nu)).
inline std::pair<std::int64_t, std::int64_t> integer_margins(const DesignParams& design) {
    const std::int64_t total = std::llround(design.n);
    const std::int64_t cases = std::llround(design.n_cases());
    return {cases, total - cases};
}

inline CaseControlTable sample_table(const PopulationParams& params, const DesignParams& design, std::uint64_t seed,
                                     std::uint64_t replicate, std::uint64_t stream = 0) {
    const auto [n1, n0] = integer_margins(design);
    if (n1 < 1 || n0 < 1) {
        throw Error(ErrorKind::InvalidParams, "design needs at least one case and one control");
    }
    const RetroDistribution r = retro_distribution(params);
    ReplicateRng rng(seed, stream, replicate);
    CaseControlTable t;
    for (int d = 1; d >= 0; --d) {
        const Grid2& p = d == 1 ? r.p_case : r.p_ctrl;
        const auto counts = rng.multinomial<4>(d == 1 ? n1 : n0, {p[0][0], p[0][1], p[1][0], p[1][1]});
        for (int c = 0; c < 4; ++c) t.w[d][c / 2][c % 2] = static_cast<double>(counts[c]);
    }
    return t;
}

// ============================================================================
// Limiting value under a possibly wrong prevalence
// ============================================================================

struct LimitPoint {
    double f_used = 0.0;
    Vec4 s_star = Vec4::Zero(); // (beta*, gamma*, theta*, pi*)
    double alpha_star = 0.0;
    double expected_loglik = 0.0;
    double score_norm = 0.0;
    Mat4 sandwich = Mat4::Zero();
};

/// Maximizer of the exact expected per-subject log-likelihood under `truth`
/// when the constraint uses f_used, and its sandwich covariance A^-1 B A^-1.
inline LimitPoint limiting_value(const PopulationParams& truth, const DesignParams& design, double f_used,
                                 double epsilon = 1e-3) {
    truth.validate();
    design.validate();
    if (!(f_used > 0.0 && f_used <= 1.0 - epsilon)) {
        throw Error(ErrorKind::InfeasiblePrevalence, "f_used must lie in (0, 1 - epsilon]");
    }
    const CaseControlTable expected = expected_table(truth, DesignParams{design.nu, 1.0});
    SolverOptions opt;
    opt.tolerance = 1e-12;
    opt.fail_tolerance = 1e-10;
    const ConstrainedSolution sol = maximize_constrained(expected, f_used, s_from_params(truth), opt);

    LimitPoint lp;
    lp.f_used = f_used;
    lp.s_star = s_from_params(sol.at.point);
    lp.alpha_star = sol.at.point.alpha;
    lp.expected_loglik = sol.at.lik.value;
    lp.score_norm = sol.score_norm;
    const Mat4 a_inv = symmetrize(Mat4((-sol.at.lik.hess).inverse()));
    const Mat4 b = stratified_score_covariance(expected, sol.at);
    lp.sandwich = symmetrize(Mat4(a_inv * b * a_inv));
    return lp;
}

// ============================================================================
// Monte-Carlo calibration
// ============================================================================

enum class FailureConvention {
    NoReject, // failed replicates count as non-rejections in the denominator
    Exclude   // failed replicates are dropped from rate denominators too
};

struct SimConfig {
    PopulationParams params;
    DesignParams design;
    int replicates = 1000;
    std::uint64_t seed = 1;
    double level = 0.05;
    std::vector<Method> methods{Method::Mar, Method::Adj, Method::AdjCon};
    std::optional<double> f_supplied; // prevalence handed to AdjCon; defaults to the true f
    FailureConvention failures = FailureConvention::NoReject;

    double adjcon_f() const { return f_supplied.value_or(params.prevalence()); }

    void validate() const {
        params.validate();
        design.validate();
        if (replicates < 1) throw Error(ErrorKind::InvalidParams, "replicates must be >= 1");
        if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::InvalidParams, "level must lie in (0,1)");
        const double f = adjcon_f();
        if (!(f > 0.0 && f < 1.0)) throw Error(ErrorKind::InvalidParams, "AdjCon prevalence must lie in (0,1)");
        if (methods.empty()) throw Error(ErrorKind::InvalidParams, "no methods requested");
    }
};

struct MethodSummary {
    Method method = Method::Mar;
    int attempted = 0;
    int included = 0;
    std::map<ErrorKind, int> failures;

    double mean_gamma = 0.0, mean_gamma_mcse = 0.0;
    double sd_root_n = 0.0, sd_root_n_mcse = 0.0;         // sd of sqrt(n) * gamma_hat
    double mean_se_root_n = 0.0, mean_se_root_n_mcse = 0.0; // mean of sqrt(n) * se
    double reject_rate = 0.0, reject_rate_mcse = 0.0;
    double coverage = 0.0, coverage_mcse = 0.0; // Wald interval covering the true gamma

    // theory at the configured truth
    double theory_limit = 0.0; // gamma + delta for Mar, gamma (or gamma* under wrong f) otherwise
    double theory_sigma = 0.0;
    double theory_power = 0.0;

    int failed() const { return attempted - included; }
};

struct MCReport {
    SimConfig config;
    double true_f = 0.0;
    double delta = 0.0;
    std::vector<MethodSummary> methods;
};

namespace detail {

struct ReplicateFit {
    bool ok = false;
    ErrorKind error = ErrorKind::InvalidParams;
    double gamma = 0.0, se = 0.0;
    bool reject = false;
};

inline ReplicateFit fit_one(Method m, const CaseControlTable& t, double f_adjcon, double level) {
    ReplicateFit r;
    try {
        FitResult fit;
        switch (m) {
        case Method::Mar: fit = fit_marginal(t); break;
        case Method::Adj: fit = fit_adjusted(t); break;
        case Method::AdjCon: fit = fit_constrained(t, f_adjcon); break;
        }
        const TestResult w = wald_test(fit, level);
        r.ok = true;
        r.gamma = fit.gamma_hat;
        r.se = fit.se_gamma;
        r.reject = w.reject;
    } catch (const Error& e) {
        r.error = e.kind();
    }
    return r;
}

inline double rate_mcse(double rate, int count) {
    return count > 0 ? std::sqrt(rate * (1.0 - rate) / count) : 0.0;
}

} // namespace detail

inline MCReport run_mc(const SimConfig& cfg) {
    cfg.validate();
    const std::size_t n_rep = static_cast<std::size_t>(cfg.replicates);
    const std::size_t n_meth = cfg.methods.size();
    const double f_ac = cfg.adjcon_f();

    std::vector<detail::ReplicateFit> fits(n_rep * n_meth);
    parallel_for(n_rep, [&](std::size_t r) {
        CaseControlTable t;
        try {
            t = sample_table(cfg.params, cfg.design, cfg.seed, r);
        } catch (const Error& e) {
            for (std::size_t m = 0; m < n_meth; ++m) fits[r * n_meth + m].error = e.kind();
            return;
        }
        for (std::size_t m = 0; m < n_meth; ++m) fits[r * n_meth + m] = detail::fit_one(cfg.methods[m], t, f_ac, cfg.level);
    });

    MCReport rep;
    rep.config = cfg;
    rep.true_f = cfg.params.prevalence();
    rep.delta = bias_delta(cfg.params.alpha, cfg.params.beta, cfg.params.gamma, cfg.params.theta);
    const double rn = std::sqrt(cfg.design.n);
    const double z = normal_quantile(1.0 - 0.5 * cfg.level);

    for (std::size_t m = 0; m < n_meth; ++m) {
        MethodSummary s;
        s.method = cfg.methods[m];
        s.attempted = cfg.replicates;
        // fold in replicate order
        double sum_g = 0.0, sum_se = 0.0;
        int rejects = 0, covers = 0;
        for (std::size_t r = 0; r < n_rep; ++r) {
            const auto& x = fits[r * n_meth + m];
            if (!x.ok) {
                ++s.failures[x.error];
                continue;
            }
            ++s.included;
            sum_g += x.gamma;
            sum_se += x.se;
            rejects += x.reject ? 1 : 0;
            covers += std::abs(x.gamma - cfg.params.gamma) <= z * x.se ? 1 : 0;
        }
        if (s.included == 0) {
            throw Error(ErrorKind::AllReplicatesFailed,
                        "every replicate failed for method " + std::string(to_string(s.method)));
        }
        const double k = s.included;
        s.mean_gamma = sum_g / k;
        s.mean_se_root_n = rn * sum_se / k;
        double ss_g = 0.0, ss_se = 0.0;
        for (std::size_t r = 0; r < n_rep; ++r) {
            const auto& x = fits[r * n_meth + m];
            if (!x.ok) continue;
            ss_g += (x.gamma - s.mean_gamma) * (x.gamma - s.mean_gamma);
            const double se = rn * x.se - s.mean_se_root_n;
            ss_se += se * se;
        }
        const double sd_g = s.included > 1 ? std::sqrt(ss_g / (k - 1.0)) : 0.0;
        const double sd_se = s.included > 1 ? std::sqrt(ss_se / (k - 1.0)) : 0.0;
        s.mean_gamma_mcse = sd_g / std::sqrt(k);
        s.sd_root_n = rn * sd_g;
        s.sd_root_n_mcse = s.included > 1 ? s.sd_root_n / std::sqrt(2.0 * (k - 1.0)) : 0.0;
        s.mean_se_root_n_mcse = sd_se / std::sqrt(k);

        const int denom = cfg.failures == FailureConvention::NoReject ? s.attempted : s.included;
        s.reject_rate = static_cast<double>(rejects) / denom;
        s.reject_rate_mcse = detail::rate_mcse(s.reject_rate, denom);
        s.coverage = static_cast<double>(covers) / k;
        s.coverage_mcse = detail::rate_mcse(s.coverage, s.included);

        if (s.method == Method::AdjCon && std::abs(f_ac - rep.true_f) > 1e-12) {
            const LimitPoint lp = limiting_value(cfg.params, cfg.design, f_ac);
            s.theory_limit = lp.s_star(1);
            s.theory_sigma = std::sqrt(lp.sandwich(1, 1));
            s.theory_power = power_from_shift(rn * s.theory_limit / s.theory_sigma, cfg.level);
        } else {
            s.theory_limit = asymptotic_limit(s.method, cfg.params);
            s.theory_sigma = std::sqrt(asymptotic_sigma_sq(s.method, cfg.params, cfg.design.nu));
            s.theory_power = asymptotic_power(s.method, cfg.params, cfg.design.nu, cfg.design.n, cfg.level);
        }
        rep.methods.push_back(std::move(s));
    }
    return rep;
}

// ============================================================================
// Misspecification sweep
// ============================================================================

struct MisspecOptions {
    double epsilon = 1e-3;
    // optional Monte-Carlo confirmation: fit AdjCon at f1 on sampled tables
    std::int64_t mc_n = 0;
    int mc_replicates = 0;
    std::uint64_t seed = 1;
};

struct MisspecRow {
    double f1 = 0.0;
    std::optional<LimitPoint> limit;
    std::string error; // empty when limit is set
    double dev_s = 0.0;     // ||s*_{f1} - s*_{f0}||
    double dev_sigma = 0.0; // ||Sigma_{f1} - Sigma_{f0}||_F
    double ratio_s = std::numeric_limits<double>::quiet_NaN();
    double ratio_sigma = std::numeric_limits<double>::quiet_NaN();

    // Monte-Carlo confirmation, when requested
    int mc_included = 0;
    double mc_mean_gamma = std::numeric_limits<double>::quiet_NaN();
    double mc_mean_gamma_mcse = std::numeric_limits<double>::quiet_NaN();
};

struct MisspecReport {
    double f0 = 0.0;
    LimitPoint reference;
    std::vector<MisspecRow> rows;
};

inline MisspecReport misspec_sweep(const PopulationParams& truth, const DesignParams& design,
                                   const std::vector<double>& f_grid, const MisspecOptions& opt = {}) {
    MisspecReport rep;
    rep.f0 = truth.prevalence();
    rep.reference = limiting_value(truth, design, rep.f0, opt.epsilon);
    rep.rows.resize(f_grid.size());

    parallel_for(f_grid.size(), [&](std::size_t k) {
        MisspecRow& row = rep.rows[k];
        row.f1 = f_grid[k];
        try {
            const LimitPoint lp = limiting_value(truth, design, row.f1, opt.epsilon);
            row.dev_s = (lp.s_star - rep.reference.s_star).norm();
            row.dev_sigma = (lp.sandwich - rep.reference.sandwich).norm();
            const double gap = std::abs(row.f1 - rep.f0);
            if (gap > 0.0) {
                row.ratio_s = row.dev_s / gap;
                row.ratio_sigma = row.dev_sigma / gap;
            }
            row.limit = lp;
        } catch (const std::exception& e) {
            row.error = e.what();
            return;
        }
        if (opt.mc_n > 0 && opt.mc_replicates > 0) {
            const DesignParams mc_design{design.nu, static_cast<double>(opt.mc_n)};
            double sum = 0.0, sum2 = 0.0;
            int ok = 0;
            for (int r = 0; r < opt.mc_replicates; ++r) {
                try {
                    const CaseControlTable t = sample_table(truth, mc_design, opt.seed, r, k + 1);
                    const double g = fit_constrained(t, row.f1).gamma_hat;
                    sum += g;
                    sum2 += g * g;
                    ++ok;
                } catch (const Error&) {
                }
            }
            row.mc_included = ok;
            if (ok > 0) {
                row.mc_mean_gamma = sum / ok;
                const double var = ok > 1 ? std::max(0.0, (sum2 - ok * row.mc_mean_gamma * row.mc_mean_gamma) / (ok - 1)) : 0.0;
                row.mc_mean_gamma_mcse = std::sqrt(var / ok);
            }
        }
    });
    return rep;
}

} // namespace ccadj
