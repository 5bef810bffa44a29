// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ccadj/cli.hpp"

using namespace ccadj;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- helpers

struct Check {
    bool ok = true;
    std::vector<std::string> notes;
    void require(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            notes.push_back(what);
        }
    }
    void note(const std::string& s) { notes.push_back(s); }
};

std::string num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// marginal log odds ratio of (D, E) by enumerating the joint law
double enumerated_marginal_log_or(const PopulationParams& p) {
    double m[2][2] = {{0, 0}, {0, 0}};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            const double px = (i ? p.theta : 1 - p.theta) * (j ? p.pi : 1 - p.pi);
            const double pd = expit(p.alpha + p.beta * i + p.gamma * j);
            m[1][j] += px * pd;
            m[0][j] += px * (1 - pd);
        }
    return std::log(m[1][1]) - std::log(m[1][0]) - std::log(m[0][1]) + std::log(m[0][0]);
}

std::vector<PopulationParams> random_grid(std::uint64_t seed, int count) {
    std::mt19937_64 rng(seed);
    auto u = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    std::vector<PopulationParams> g;
    for (int k = 0; k < count; ++k) {
        PopulationParams p{u(-6, 3), u(-3, 3), u(-3, 3), u(0.02, 0.98), u(0.02, 0.98)};
        // a share of exact nulls so the equality cases get exercised
        if (k % 50 == 0) p.beta = 0.0;
        if (k % 50 == 25) p.gamma = 0.0;
        g.push_back(p);
    }
    return g;
}

std::vector<double> linspace(double lo, double hi, int k) {
    std::vector<double> g(k);
    for (int a = 0; a < k; ++a) g[a] = lo + (hi - lo) * a / (k - 1);
    return g;
}

PopulationParams at_f(double f, double beta, double gamma, double theta, double pi) {
    return {alpha_from_prevalence(f, beta, gamma, theta, pi), beta, gamma, theta, pi};
}

int run_cli(std::vector<std::string> args, std::string* err_out = nullptr) {
    args.insert(args.begin(), "ccadj");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream os, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), os, err);
    if (err_out) *err_out = err.str();
    return code;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::map<std::string, double>> read_numeric_csv(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    auto strip = [](std::string s) {
        if (!s.empty() && s.back() == '\r') s.pop_back();
        return s;
    };
    std::getline(in, line);
    const auto head = io::split(strip(line), ',');
    std::vector<std::map<std::string, double>> rows;
    while (std::getline(in, line)) {
        const auto f = io::split(strip(line), ',');
        std::map<std::string, double> r;
        for (std::size_t k = 0; k < head.size() && k < f.size(); ++k) r[head[k]] = std::stod(f[k]);
        rows.push_back(std::move(r));
    }
    return rows;
}

void set_threads(const char* v) { setenv("CCADJ_THREADS", v, 1); }

// Fig. 1 parameter point
constexpr double kBeta = 1.0, kGamma = 0.3, kTheta = 0.4, kPi = 0.5, kNu = 1.0;

// ---------------------------------------------------------------- criteria

Check criterion1() {
    Check c;
    double worst = 0.0;
    for (const auto& p : random_grid(101, 10000)) {
        const double d = std::abs(p.gamma + bias_delta(p.alpha, p.beta, p.gamma, p.theta) - enumerated_marginal_log_or(p));
        worst = std::max(worst, d);
    }
    c.require(worst <= 1e-12, "max |gamma + delta - enumerated| = " + num(worst));
    c.note("max error " + num(worst));
    return c;
}

Check criterion2() {
    Check c;
    int violations = 0, equal_off_null = 0, unequal_at_null = 0;
    for (const auto& p : random_grid(101, 10000)) {
        const double lim = std::abs(p.gamma + bias_delta(p.alpha, p.beta, p.gamma, p.theta));
        const double g = std::abs(p.gamma);
        if (lim > g + 1e-12) ++violations;
        const bool null = p.beta == 0.0 || p.gamma == 0.0;
        if (null && std::abs(lim - g) > 1e-12) ++unequal_at_null;
        if (!null && !(g - lim > 1e-12)) ++equal_off_null;
    }
    c.require(violations == 0, std::to_string(violations) + " points with |gamma + delta| > |gamma|");
    c.require(unequal_at_null == 0, std::to_string(unequal_at_null) + " null points with shrinkage");
    c.require(equal_off_null == 0, std::to_string(equal_off_null) + " non-null points without shrinkage");

    const auto grid = linspace(0.01, 0.99, 99);
    const double step = grid[1] - grid[0];
    std::size_t best = 0;
    // |gamma + delta| is what bottoms out at f*; delta vanishes at both ends of the grid
    std::vector<double> limit;
    for (double f : grid) {
        const auto p = at_f(f, kBeta, kGamma, kTheta, kPi);
        limit.push_back(std::abs(p.gamma + bias_delta(p.alpha, p.beta, p.gamma, p.theta)));
    }
    for (std::size_t k = 1; k < grid.size(); ++k)
        if (limit[k] < limit[best]) best = k;
    const double f_star = bias_minimizer(kBeta, kGamma, kTheta, kPi).f_star;
    c.require(std::abs(grid[best] - f_star) <= step, "grid minimizer " + num(grid[best]) + " vs f* " + num(f_star));
    c.note("f* " + num(f_star) + ", grid argmin " + num(grid[best]));
    return c;
}

Check criterion3() {
    Check c;
    std::mt19937_64 rng(303);
    int order = 0, eq_fail = 0, strict_fail = 0;
    for (const auto& p : random_grid(303, 10000)) {
        const double nu = std::exp(std::uniform_real_distribution<double>(-2, 2)(rng));
        const double m = sigma_M_sq(p, nu), a = sigma_A_sq(p, nu);
        if (m > a * (1 + 1e-12)) ++order;
        if (p.beta == 0.0 && std::abs(m - a) > 1e-12 * a) ++eq_fail;
        if (p.beta != 0.0 && !(m < a)) ++strict_fail;
    }
    c.require(order == 0, std::to_string(order) + " points with sigma2_M > sigma2_A");
    c.require(eq_fail == 0, std::to_string(eq_fail) + " beta=0 points with sigma2_M != sigma2_A");
    c.require(strict_fail == 0, std::to_string(strict_fail) + " beta!=0 points with sigma2_M == sigma2_A");

    int panel = 0;
    for (double f : linspace(0.01, 0.99, 99)) {
        const auto p = at_f(f, kBeta, 0.05, kTheta, kPi);
        const double m = sigma_M_sq(p, kNu), ac = sigma_AC_sq(p, kNu), a = sigma_A_sq(p, kNu);
        if (!(m <= ac && ac <= a)) ++panel;
    }
    c.require(panel == 0, std::to_string(panel) + " Fig. 1B points out of order");
    return c;
}

Check criterion4() {
    Check c;
    const double l = lambda_ratio(-30, kBeta, kTheta, kNu), l0 = lambda0(kBeta, kTheta, kNu);
    c.require(std::abs(l - l0) <= 1e-6, "lambda(-30) - lambda0 = " + num(l - l0));

    const double sac = sigma_AC_sq({-30, kBeta, 1e-8, kTheta, kPi}, kNu), s0 = sigma0_sq(kPi, kNu);
    c.require(std::abs(sac / s0 - 1) <= 1e-3, "sigma2_AC / sigma2_0 - 1 = " + num(sac / s0 - 1));

    // e_P(M,A) = lambda0 + O(rho): remainder / rho stays bounded and settles
    std::vector<double> rem;
    for (double rho : {1e-2, 1e-3, 1e-4, 1e-5}) rem.push_back((pitman_are_M_vs_A(std::log(rho), kBeta, kTheta, kNu) - l0) / rho);
    bool settled = true;
    for (std::size_t k = 1; k < rem.size(); ++k) settled = settled && std::abs(rem[k] - rem.back()) <= std::abs(rem[k - 1] - rem.back()) + 1e-9;
    c.require(std::isfinite(rem.back()) && settled, "e_P(M,A) first-order remainder not bounded");
    c.note("[e_P(M,A) - lambda0]/rho -> " + num(rem.back()));

    // [e_P(M,AC) - 1] / rho^2 with Richardson extrapolation over rho = 1e-1, 1e-2, 1e-3
    auto q = [](double rho) { return (pitman_are_M_vs_AC(std::log(rho), kBeta, kTheta, kPi, kNu) - 1) / (rho * rho); };
    const double q1 = q(1e-1), q2 = q(1e-2), q3 = q(1e-3);
    const double r12 = (10 * q2 - q1) / 9, r23 = (10 * q3 - q2) / 9;
    const double extrap = (10 * r23 - r12) / 9;
    const double tau = pitman_tau(kBeta, kTheta, kNu);
    const double rel = std::abs(extrap - tau) / std::abs(tau);
    c.require(rel <= 1e-2, "Richardson limit " + num(extrap) + " vs published tau " + num(tau) + " (rel " + num(rel) + ")");
    return c;
}

Check criterion5() {
    Check c;
    double worst_closed = 0.0, worst_fd = 0.0;
    for (const auto& p : random_grid(505, 1000)) {
        const double nu = 1.0 + std::abs(p.gamma);
        const double lam = lambda_ratio(p.alpha, p.beta, p.theta, nu);
        const double ep = pitman_are_M_vs_A(p.alpha, p.beta, p.theta, nu);
        // d(gamma + delta)/d gamma at gamma = 0 in closed form
        const double b1 = 1 + std::expm1(p.beta) * (1 - p.theta);
        const double b2 = 1 / (1 + std::expm1(-p.beta) * (1 - p.theta));
        const double r = std::exp(p.alpha);
        const double closed = (b1 * b2 * r * r + 2 * b2 * r + 1) / (b1 * b2 * r * r + (b1 + b2) * r + 1);
        auto limit = [&](double g) { return enumerated_marginal_log_or({p.alpha, p.beta, g, p.theta, p.pi}); };
        const double h = 1e-5;
        const double fd = (limit(h) - limit(-h)) / (2 * h);
        worst_closed = std::max(worst_closed, std::abs(ep - closed * closed * lam) / ep);
        worst_fd = std::max(worst_fd, std::abs(ep - fd * fd * lam) / ep);
    }
    c.require(worst_closed <= 1e-12, "closed-form derivative: max rel error " + num(worst_closed));
    c.require(worst_fd <= 1e-7, "finite-difference derivative: max rel error " + num(worst_fd));
    c.note("closed " + num(worst_closed) + ", fd " + num(worst_fd));
    return c;
}

Check criterion6() {
    Check c;
    for (double f : {0.05, 0.3, 0.7}) {
        const auto p = at_f(f, kBeta, kGamma, kTheta, kPi);
        const DesignParams d{kNu, 2e4};
        const auto t = expected_table(p, d);
        const std::string at = " at f=" + num(f);
        const FitResult mar = fit_marginal(t);
        const FitResult adj = fit_adjusted(t);
        const FitResult ac = fit_constrained(t, f);
        const double lim = p.gamma + bias_delta(p.alpha, p.beta, p.gamma, p.theta);
        c.require(std::abs(mar.gamma_hat - lim) <= 1e-8, "Mar vs gamma + delta" + at);
        c.require(std::abs(adj.param("beta") - p.beta) <= 1e-6 && std::abs(adj.gamma_hat - p.gamma) <= 1e-6,
                  "Adj recovery" + at);
        c.require(std::abs(ac.param("beta") - p.beta) <= 1e-6 && std::abs(ac.gamma_hat - p.gamma) <= 1e-6,
                  "AdjCon recovery" + at);
        const double gart = std::sqrt(sigma_A_sq(p, kNu) / d.n);
        c.require(std::abs(adj.se_gamma - gart) <= 1e-8, "Adj se vs Gart" + at + ": " + num(adj.se_gamma - gart));
        const double rel = std::abs(ac.se_gamma * ac.se_gamma * d.n / sigma_AC_sq(p, kNu) - 1);
        c.require(rel <= 1e-6, "AdjCon variance vs sigma2_AC" + at + ": rel " + num(rel));
    }
    return c;
}

Check criterion7() {
    Check c;
    SimConfig cfg;
    cfg.params = at_f(0.3, kBeta, kGamma, kTheta, kPi);
    cfg.design = {kNu, 2e4};
    cfg.replicates = 2000;
    cfg.seed = 20240;
    const MCReport alt = run_mc(cfg);
    for (const auto& m : alt.methods) {
        const std::string name(to_string(m.method));
        const double z = (m.mean_gamma - m.theory_limit) / m.mean_gamma_mcse;
        const double sd = m.sd_root_n / m.theory_sigma - 1;
        c.require(std::abs(z) <= 3, name + " mean off by " + num(z) + " MC se");
        c.require(std::abs(sd) <= 0.05, name + " sd off by " + num(100 * sd) + "%");
        c.note(name + ": mean z " + num(z) + ", sd " + num(100 * sd) + "%");
    }
    cfg.params = at_f(0.3, kBeta, 0.0, kTheta, kPi);
    cfg.seed = 20241;
    const MCReport null = run_mc(cfg);
    for (const auto& m : null.methods) {
        const std::string name(to_string(m.method));
        c.require(std::abs(m.reject_rate - cfg.level) <= 3 * m.reject_rate_mcse,
                  name + " null rejection " + num(m.reject_rate));
        c.note(name + " null rejection " + num(m.reject_rate));
    }
    return c;
}

Check criterion8(const fs::path& dir) {
    Check c;
    const std::vector<std::string> common{"--beta", "1", "--theta", "0.4", "--pi", "0.5", "--nu", "1"};
    struct Panel {
        std::string name, gamma, grid;
    };
    for (const Panel& p : {Panel{"A", "0.3", "0.01:0.99:99"}, Panel{"B", "0.05", "0.01:0.99:99"},
                           Panel{"C", "0.05", "0.02:0.98:50"}}) {
        std::vector<std::string> args{"theory", "--gamma", p.gamma, "--f-grid", p.grid, "--n", "50000",
                                      "--out", (dir / ("fig1" + p.name + ".csv")).string()};
        args.insert(args.begin() + 1, common.begin(), common.end());
        std::string err;
        c.require(run_cli(args, &err) == 0, "theory panel " + p.name + " failed: " + err);
    }
    const auto rows = read_numeric_csv(dir / "fig1C.csv");
    c.require(rows.size() == 50, "panel C has " + std::to_string(rows.size()) + " rows");
    int adjcon_below = 0, mar_not_above = 0, edge_rows = 0;
    for (const auto& r : rows) {
        if (r.at("power_AC") < r.at("power_A")) ++adjcon_below;
        if (r.at("f") <= 0.05 || r.at("f") >= 0.95) {
            ++edge_rows;
            if (!(r.at("power_M") > r.at("power_A"))) ++mar_not_above;
        }
    }
    c.require(adjcon_below == 0, std::to_string(adjcon_below) + " rows with power_AdjCon < power_Adj");
    c.require(edge_rows >= 2 && mar_not_above == 0, std::to_string(mar_not_above) + " edge rows with power_Mar <= power_Adj");
    c.note("panels written to " + dir.string());
    return c;
}

Check criterion9() {
    Check c;
    const auto p = at_f(0.3, kBeta, kGamma, kTheta, kPi);
    const double f0 = p.prevalence();
    const std::vector<double> gaps{0.1, 0.05, 0.025, 0.0125};
    std::vector<double> grid{f0};
    for (double g : gaps) grid.push_back(f0 + g);
    for (double g : gaps) grid.push_back(f0 - g);
    const MisspecReport rep = misspec_sweep(p, {kNu, 2e4}, grid);
    for (const auto& r : rep.rows) c.require(r.limit.has_value(), "row f1=" + num(r.f1) + " failed: " + r.error);
    if (!c.ok) return c;
    c.require(rep.rows[0].dev_s <= 1e-8 && rep.rows[0].dev_sigma <= 1e-8, "f1 = f0 row not zero");
    for (int side = 0; side < 2; ++side) {
        for (int col = 0; col < 2; ++col) {
            std::vector<double> ratio;
            for (int k = 0; k < 4; ++k) {
                const auto& r = rep.rows[1 + 4 * side + k];
                ratio.push_back(col == 0 ? r.ratio_s : r.ratio_sigma);
            }
            const auto [lo, hi] = std::minmax_element(ratio.begin(), ratio.end());
            const std::string what = std::string(col == 0 ? "s*" : "Sigma") + (side == 0 ? " above f0" : " below f0");
            c.require(*hi < 2 * *lo, what + " ratios span " + num(*hi / *lo) + "x");
            // upward trend: strictly growing as the gap shrinks and ending higher than it started
            const bool rising = std::is_sorted(ratio.begin(), ratio.end()) && ratio.back() > 1.1 * ratio.front();
            c.require(!rising, what + " ratios trend upward");
            c.note(what + " ratios " + num(ratio.front()) + " .. " + num(ratio.back()));
        }
    }
    return c;
}

Check criterion10(const fs::path& dir) {
    Check c;
    struct Run {
        std::string name;
        std::vector<std::string> args;
    };
    const std::vector<Run> runs{
        {"simulate", {"simulate", "--replicates", "200", "--seed", "4242", "--n", "5000", "--gamma", "0.2"}},
        {"simulate-wrong-f", {"simulate", "--replicates", "100", "--seed", "9", "--n", "4000", "--adjcon-f", "0.35",
                              "--methods", "adjcon"}},
        {"misspec", {"misspec", "--f1", "0.35,0.4", "--mc-confirm", "20000", "20", "--seed", "11"}},
    };
    for (const auto& r : runs) {
        const std::string first = (dir / (r.name + ".csv")).string();
        const std::string second = (dir / (r.name + ".rerun.csv")).string();
        auto args = r.args;
        args.push_back("--out");
        args.push_back(first);
        set_threads("1");
        std::string err;
        if (run_cli(args, &err) != 0) {
            c.require(false, r.name + " failed: " + err);
            continue;
        }
        set_threads("4");
        const int code = run_cli({r.args[0], "--config", first + ".manifest", "--out", second}, &err);
        c.require(code == 0, r.name + " rerun failed: " + err);
        c.require(slurp(first) == slurp(second), r.name + " rerun differs");
    }
    unsetenv("CCADJ_THREADS");
    return c;
}

} // namespace

int main() {
    const fs::path dir = fs::current_path() / "acceptance_out";
    fs::create_directories(dir);

    struct Criterion {
        int id;
        std::string title;
        double budget_s;
        std::function<Check()> run;
    };
    const std::vector<Criterion> all{
        {1, "bias identity against enumeration", 5, criterion1},
        {2, "shrinkage toward zero and bias minimizer", 5, criterion2},
        {3, "variance ordering", 30, criterion3},
        {4, "rare-outcome limits", 10, criterion4},
        {5, "efficiency equals slope squared times lambda", 5, criterion5},
        {6, "estimators on expected tables", 5, criterion6},
        {7, "Monte-Carlo calibration", 180, criterion7},
        {8, "power ordering from theory CSVs", 10, [&] { return criterion8(dir); }},
        {9, "robustness to a wrong prevalence", 30, criterion9},
        {10, "bitwise rerun from manifest", 60, [&] { return criterion10(dir); }},
    };

    int failed = 0;
    for (const auto& cr : all) {
        const auto t0 = std::chrono::steady_clock::now();
        Check res;
        try {
            res = cr.run();
        } catch (const std::exception& e) {
            res.require(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.require(secs <= cr.budget_s, "took " + num(secs) + " s, budget " + num(cr.budget_s) + " s");
        if (!res.ok) ++failed;
        std::string detail;
        for (const auto& n : res.notes) detail += (detail.empty() ? "" : "; ") + n;
        std::printf("%s criterion %d: %s (%.2f s)%s%s\n", res.ok ? "PASS" : "FAIL", cr.id, cr.title.c_str(), secs,
                    detail.empty() ? "" : " -- ", detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(all.size()) - failed, all.size());
    return failed == 0 ? 0 : 1;
}
