#pragma once

// Three estimators of the exposure log odds ratio gamma from a 2x2x2
// case-control table:
//
//   Mar    - prospective logistic fit of D on E alone (closed form)
//   Adj    - prospective logistic fit of D on X and E
//   AdjCon - retrospective MLE under E independent of X and a known prevalence
//
// plus the Wald test shared by all three.

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ccadj/error.hpp"
#include "ccadj/likelihood.hpp"
#include "ccadj/model.hpp"
#include "ccadj/numeric.hpp"
#include "ccadj/table.hpp"

namespace ccadj {

enum class Method { Mar, Adj, AdjCon };

inline constexpr std::string_view to_string(Method m) {
    switch (m) {
    case Method::Mar: return "mar";
    case Method::Adj: return "adj";
    case Method::AdjCon: return "adjcon";
    }
    return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
    if (s == "mar") return Method::Mar;
    if (s == "adj") return Method::Adj;
    if (s == "adjcon") return Method::AdjCon;
    return std::nullopt;
}

struct FitResult {
    Method method = Method::Mar;
    double gamma_hat = 0.0;
    double se_gamma = 0.0;
    std::vector<std::string> param_names;
    Eigen::VectorXd params;
    Eigen::MatrixXd cov;
    double loglik = 0.0;
    bool converged = false;
    int iterations = 0;
    bool continuity_corrected = false;

    // AdjCon only
    std::optional<double> prevalence;
    std::optional<double> implied_alpha;
    std::optional<Eigen::MatrixXd> robust_cov;

    double param(std::string_view name) const {
        for (std::size_t k = 0; k < param_names.size(); ++k) {
            if (param_names[k] == name) return params(static_cast<Eigen::Index>(k));
        }
        throw std::out_of_range("no parameter named " + std::string(name));
    }
};

struct TestResult {
    double z = 0.0;
    double p_value = 1.0;
    bool reject = false;
    double level = 0.05;
};

// ============================================================================
// Mar
// ============================================================================

struct MarginalOptions {
    bool continuity_correction = false; // Haldane-Anscombe +0.5 on the collapsed cells
};

inline FitResult fit_marginal(const CaseControlTable& table, const MarginalOptions& opt = {}) {
    table.validate();
    const double add = opt.continuity_correction ? 0.5 : 0.0;
    const double n11 = table.collapsed(1, 1) + add;
    const double n10 = table.collapsed(1, 0) + add;
    const double n01 = table.collapsed(0, 1) + add;
    const double n00 = table.collapsed(0, 0) + add;
    if (!(n11 > 0.0 && n10 > 0.0 && n01 > 0.0 && n00 > 0.0)) {
        throw Error(ErrorKind::ZeroCell, "a collapsed (D, E) cell is empty");
    }

    FitResult r;
    r.method = Method::Mar;
    r.continuity_corrected = opt.continuity_correction;
    r.param_names = {"alpha0", "gamma0"};
    r.params.resize(2);
    r.params << std::log(n10 / n00), std::log(n11 / n10) - std::log(n01 / n00);
    r.gamma_hat = r.params(1);

    const double v0 = 1.0 / n10 + 1.0 / n00;
    const double v1 = 1.0 / n11 + 1.0 / n01;
    r.cov.resize(2, 2);
    r.cov << v0, -v0, -v0, v0 + v1;
    r.se_gamma = std::sqrt(v0 + v1);

    auto binom_ll = [](double cases, double controls) {
        const double n = cases + controls;
        return cases * std::log(cases / n) + controls * std::log(controls / n);
    };
    r.loglik = binom_ll(n11, n01) + binom_ll(n10, n00);
    r.converged = true;
    return r;
}

// ============================================================================
// Adj
// ============================================================================

struct AdjustedOptions {
    int max_iterations = 100;
    double tolerance = 1e-10; // max |score| per unit of table weight
    double divergence_norm = 50.0;
};

namespace detail {

struct Logistic3 {
    double value = 0.0;
    Vec3 grad = Vec3::Zero();
    Mat3 hess = Mat3::Zero();
};

inline Logistic3 prospective_loglik(const CaseControlTable& t, const Vec3& b) {
    Logistic3 out;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            const Vec3 z(1.0, i, j);
            const double eta = b.dot(z);
            const double s = sigmoid(eta);
            const double n_all = t.pooled(i, j);
            out.value += t(1, i, j) * eta - n_all * softplus(eta);
            out.grad += (t(1, i, j) - n_all * s) * z;
            out.hess -= n_all * s * (1.0 - s) * z * z.transpose();
        }
    }
    return out;
}

} // namespace detail

inline FitResult fit_adjusted(const CaseControlTable& table, const AdjustedOptions& opt = {}) {
    table.validate();
    for (int k = 0; k < 2; ++k) {
        if (!(table.x_total(k) > 0.0) || !(table.e_total(k) > 0.0)) {
            throw Error(ErrorKind::ZeroMargin, "an X or E stratum is empty");
        }
    }
    const double n = table.total();
    Vec3 b(logit(table.n_cases() / n), 0.0, 0.0);
    detail::Logistic3 cur = detail::prospective_loglik(table, b);

    FitResult r;
    r.method = Method::Adj;
    int iter = 0;
    for (; iter < opt.max_iterations; ++iter) {
        const Vec3 step = (-cur.hess).ldlt().solve(cur.grad);
        // under separation the score per weight fades while steps stay near 1,
        // so a small score alone does not mean convergence
        if (cur.grad.cwiseAbs().maxCoeff() <= opt.tolerance * n && step.cwiseAbs().maxCoeff() <= 1e-6) break;
        double lambda = 1.0;
        detail::Logistic3 next;
        Vec3 cand;
        for (int h = 0; h < 40; ++h, lambda *= 0.5) {
            cand = b + lambda * step;
            next = detail::prospective_loglik(table, cand);
            if (next.value >= cur.value - 1e-12 * std::abs(cur.value)) break;
        }
        b = cand;
        cur = next;
        if (!b.allFinite() || b.cwiseAbs().maxCoeff() > opt.divergence_norm) {
            throw Error(ErrorKind::Separation, "Newton iterates diverge; the logistic MLE is infinite");
        }
    }
    // a few full steps past the per-weight criterion while the score keeps shrinking
    for (int polish = 0; polish < 3 && cur.grad.cwiseAbs().maxCoeff() > opt.tolerance; ++polish) {
        const Vec3 cand = b + (-cur.hess).ldlt().solve(cur.grad);
        const detail::Logistic3 next = detail::prospective_loglik(table, cand);
        if (!(next.grad.cwiseAbs().maxCoeff() < cur.grad.cwiseAbs().maxCoeff())) break;
        b = cand;
        cur = next;
    }
    r.iterations = iter;
    r.converged = cur.grad.cwiseAbs().maxCoeff() <= opt.tolerance * n;
    if (!r.converged) {
        std::ostringstream os;
        os << "score max-norm " << cur.grad.cwiseAbs().maxCoeff() << " after " << iter << " iterations";
        throw Error(ErrorKind::NonConvergence, os.str());
    }

    // with both margins present, a degenerate information can only come from
    // fitted probabilities saturating at 0 or 1 along a separating direction
    const Mat3 info = symmetrize(-cur.hess);
    if (!(min_eigenvalue(info) > 1e-12 * info.trace())) {
        throw Error(ErrorKind::Separation, "fitted probabilities reach 0 or 1; the logistic MLE is infinite");
    }
    r.param_names = {"alpha", "beta", "gamma"};
    r.params = b;
    r.cov = symmetrize(Mat3(info.inverse()));
    r.gamma_hat = b(2);
    r.se_gamma = std::sqrt(r.cov(2, 2));
    r.loglik = cur.value;
    return r;
}

// ============================================================================
// AdjCon
// ============================================================================

enum class VarianceKind { Observed, Expected };

struct ConstrainedOptions {
    VarianceKind variance = VarianceKind::Observed;
    bool possibly_misspecified = false; // also report the sandwich covariance
    SolverOptions solver{};
};

namespace detail {

/// Consistent moment start: pr(X=1) = f pr(X=1|D=1) + (1-f) pr(X=1|D=0), same for E.
inline Vec4 constrained_start(const CaseControlTable& t, double f) {
    double beta = 0.0, gamma = 0.0;
    try {
        const FitResult adj = fit_adjusted(t);
        beta = adj.params(1);
        gamma = adj.params(2);
    } catch (const Error&) {
        // separated or degenerate tables start from the null
    }
    auto share = [&](int d, bool x_axis) {
        const double num = x_axis ? t(d, 1, 0) + t(d, 1, 1) : t(d, 0, 1) + t(d, 1, 1);
        return num / t.margin(d);
    };
    const double theta = std::clamp(f * share(1, true) + (1.0 - f) * share(0, true), 0.01, 0.99);
    const double pi = std::clamp(f * share(1, false) + (1.0 - f) * share(0, false), 0.01, 0.99);
    return Vec4(beta, gamma, theta, pi);
}

} // namespace detail

inline FitResult fit_constrained(const CaseControlTable& table, double f, const ConstrainedOptions& opt = {},
                                 std::optional<Vec4> start = std::nullopt) {
    table.validate();
    if (!(f > 0.0 && f < 1.0)) {
        throw Error(ErrorKind::InvalidParams, "prevalence f must lie in (0,1)");
    }
    const Vec4 s0 = start.value_or(detail::constrained_start(table, f));
    const ConstrainedSolution sol = maximize_constrained(table, f, s0, opt.solver);
    const Vec4 s = s_from_params(sol.at.point);

    const double edge = opt.solver.boundary;
    if (s(2) <= edge || s(2) >= 1.0 - edge || s(3) <= edge || s(3) >= 1.0 - edge ||
        std::abs(s(0)) >= opt.solver.max_abs_coef || std::abs(s(1)) >= opt.solver.max_abs_coef) {
        throw Error(ErrorKind::BoundaryEstimate, "estimate pinned at the parameter box edge");
    }

    Mat4 info = -sol.at.lik.hess;
    if (opt.variance == VarianceKind::Expected) {
        const DesignParams design{table.nu(), table.total()};
        const CaseControlTable fitted = expected_table(sol.at.point, design);
        info = -evaluate_constrained(fitted, f, s).lik.hess;
    }
    info = symmetrize(info);
    if (!(min_eigenvalue(info) > 1e-12 * info.trace())) {
        throw Error(ErrorKind::SingularInformation, "constrained information is not positive definite");
    }

    FitResult r;
    r.method = Method::AdjCon;
    r.param_names = {"beta", "gamma", "theta", "pi"};
    r.params = s;
    r.cov = symmetrize(Mat4(info.inverse()));
    r.gamma_hat = s(1);
    r.se_gamma = std::sqrt(r.cov(1, 1));
    r.loglik = sol.at.lik.value;
    r.converged = sol.converged;
    r.iterations = sol.iterations;
    r.prevalence = f;
    r.implied_alpha = sol.at.point.alpha;
    if (opt.possibly_misspecified) {
        const Mat4 hinv = (-sol.at.lik.hess).inverse();
        const Mat4 b = stratified_score_covariance(table, sol.at);
        r.robust_cov = Eigen::MatrixXd(symmetrize(Mat4(hinv * b * hinv)));
    }
    return r;
}

// ============================================================================
// Wald test
// ============================================================================

inline TestResult wald_test(const FitResult& fit, double level) {
    if (!fit.converged || !(fit.se_gamma > 0.0) || !std::isfinite(fit.se_gamma)) {
        throw Error(ErrorKind::NotConverged, "Wald test needs a converged fit with positive standard error");
    }
    if (!(level > 0.0 && level < 1.0)) {
        throw Error(ErrorKind::InvalidParams, "test level must lie in (0,1)");
    }
    TestResult t;
    t.level = level;
    t.z = fit.gamma_hat / fit.se_gamma;
    t.p_value = std::clamp(std::erfc(std::abs(t.z) / std::sqrt(2.0)), 0.0, 1.0);
    t.reject = t.p_value < level;
    return t;
}

} // namespace ccadj
