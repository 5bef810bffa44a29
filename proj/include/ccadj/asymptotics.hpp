#pragma once

// Closed-form large-sample theory for the three estimators: the limiting bias
// of Mar, the asymptotic variances of sqrt(n) * estimate, Pitman efficiencies
// and Wald-test power under a fixed alternative.

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "ccadj/error.hpp"
#include "ccadj/estimators.hpp"
#include "ccadj/likelihood.hpp"
#include "ccadj/model.hpp"
#include "ccadj/numeric.hpp"
#include "ccadj/table.hpp"

namespace ccadj {

struct BiasCoefficients {
    double b1 = 1.0;
    double b2 = 1.0;
};

/// b1 = 1 + (e^beta - 1)(1 - theta) >= b2 = 1 / {1 + (e^-beta - 1)(1 - theta)} > 0.
inline BiasCoefficients bias_coefficients(double beta, double theta) {
    return {1.0 + std::expm1(beta) * (1.0 - theta), 1.0 / (1.0 + std::expm1(-beta) * (1.0 - theta))};
}

/// Limiting bias of the marginal log odds ratio: gamma_M -> gamma + delta.
inline double bias_delta(double alpha, double beta, double gamma, double theta) {
    const auto [b1, b2] = bias_coefficients(beta, theta);
    const double rho = std::exp(alpha);
    const double num = rho * (b1 - b2) * (-std::expm1(gamma));
    const double den = (1.0 + std::exp(alpha + gamma) * b1) * (1.0 + rho * b2);
    return std::log1p(num / den);
}

struct BiasMinimizer {
    double alpha_star = 0.0;
    double f_star = 0.0;
};

/// Stationary point of delta in alpha (and its prevalence): |gamma + delta| is
/// smallest there, so the marginal estimate is pulled furthest toward zero.
inline BiasMinimizer bias_minimizer(double beta, double gamma, double theta, double pi) {
    if (beta == 0.0 || gamma == 0.0) {
        throw Error(ErrorKind::VacuousMinimizer, "delta is identically zero when beta = 0 or gamma = 0");
    }
    const auto [b1, b2] = bias_coefficients(beta, theta);
    BiasMinimizer m;
    m.alpha_star = -0.5 * (std::log(b1 * b2) + gamma);
    m.f_star = prevalence(m.alpha_star, beta, gamma, theta, pi);
    return m;
}

/// d(gamma + delta)/d gamma at gamma = 0, as a function of rho = e^alpha.
inline double bias_slope_at_null(double alpha, double beta, double theta) {
    const auto [b1, b2] = bias_coefficients(beta, theta);
    const double rho = std::exp(alpha);
    return (b1 * b2 * rho * rho + 2.0 * b2 * rho + 1.0) / (b1 * b2 * rho * rho + (b1 + b2) * rho + 1.0);
}

// ============================================================================
// Asymptotic variances of sqrt(n) * estimate
// ============================================================================

inline double sigma0_sq(double pi, double nu) { return (2.0 + nu + 1.0 / nu) / (pi * (1.0 - pi)); }

inline double sigma_M_sq(const PopulationParams& p, double nu) {
    const RetroDistribution r = retro_distribution(p);
    return (1.0 + nu) / (r.p0_prime * (1.0 - r.p0_prime)) + (1.0 + nu) / (nu * r.p1_prime * (1.0 - r.p1_prime));
}

/// Inverse-variance combination of the per-X-stratum Woolf variances.
inline double sigma_A_sq(const PopulationParams& p, double nu) {
    const RetroDistribution r = retro_distribution(p);
    double precision = 0.0;
    for (int i = 0; i < 2; ++i) {
        const double d0 = r.d_mat[i][0], h0 = r.h_mat[i][0];
        const double d1 = r.d_mat[i][1], h1 = r.h_mat[i][1];
        const double stratum = (1.0 + nu) / (d0 * h0 * (1.0 - h0)) + (1.0 + nu) / (nu * d1 * h1 * (1.0 - h1));
        precision += 1.0 / stratum;
    }
    return 1.0 / precision;
}

/// Per-subject Fisher information of the constrained likelihood in
/// u = (alpha, beta, gamma, pi), theta profiled through the prevalence
/// constraint. Cell weights are the exact expectations E(n_{+ij}) / n.
inline Mat4 constrained_information_u(const PopulationParams& p, double nu) {
    const RetroDistribution r = retro_distribution(p);
    Grid2 e{};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) e[i][j] = (nu * r.p_case[i][j] + r.p_ctrl[i][j]) / (1.0 + nu);

    auto pq = [&](int i, int j) {
        const double s = cell_prob(p.alpha, p.beta, p.gamma, i, j);
        return s * (1.0 - s);
    };
    const double a = e[1][1] * pq(1, 1) + e[1][0] * pq(1, 0) + e[0][1] * pq(0, 1) + e[0][0] * pq(0, 0);
    const double b = e[1][1] * pq(1, 1) + e[1][0] * pq(1, 0);
    const double c = e[1][1] * pq(1, 1) + e[0][1] * pq(0, 1);
    const double d = e[1][1] * pq(1, 1);
    const double t = (e[1][1] + e[0][1]) / (p.pi * p.pi) + (e[1][0] + e[0][0]) / ((1.0 - p.pi) * (1.0 - p.pi));
    const double x1 = e[1][1] + e[1][0], x0 = e[0][1] + e[0][0];
    const double g = x1 / (p.theta * p.theta) + x0 / ((1.0 - p.theta) * (1.0 - p.theta));
    const double h = x0 / (1.0 - p.theta) - x1 / p.theta;

    Mat4 info;
    info << a, b, c, 0.0,
            b, b, d, 0.0,
            c, d, c, 0.0,
            0.0, 0.0, 0.0, t;
    const ImplicitCoordinate th = implicit_coordinate(prevalence_derivatives(p), kTheta);
    info += g * th.d1 * th.d1.transpose() + h * th.d2;
    return symmetrize(info);
}

/// Per-subject Fisher information in s = (beta, gamma, theta, pi) with alpha
/// implied by the prevalence; regular at beta = 0.
inline Mat4 constrained_information_s(const PopulationParams& p, double nu) {
    const CaseControlTable expected = expected_table(p, DesignParams{nu, 1.0});
    return symmetrize(Mat4(-evaluate_constrained(expected, p.prevalence(), s_from_params(p)).lik.hess));
}

namespace detail {

inline void require_regular(const Mat4& info) {
    if (!(min_eigenvalue(info) >= 1e-12 * info.trace())) {
        throw Error(ErrorKind::SingularInformation, "constrained information is numerically singular");
    }
}

} // namespace detail

/// Evaluated in the s chart. The theta-profiled u form gives the same number
/// in exact arithmetic, but its Jacobian grows like 1/beta and it loses about
/// two digits per decade of beta below 0.1.
inline double sigma_AC_sq(const PopulationParams& p, double nu) {
    const Mat4 info = constrained_information_s(p, nu);
    detail::require_regular(info);
    return info.inverse()(1, 1);
}

// ============================================================================
// Variance ratios and Pitman efficiencies
// ============================================================================

/// lim_{gamma -> 0} sigma_A^2 / sigma_M^2.
inline double lambda_ratio(double alpha, double beta, double theta, double nu) {
    const double r = (1.0 + std::exp(alpha + beta)) / (1.0 + std::exp(alpha));
    const double lower = 1.0 + ((1.0 - theta) / theta) * r * ((nu + std::exp(-beta)) / (nu + 1.0));
    const double upper = 1.0 + (theta / (1.0 - theta)) / r * ((nu + std::exp(beta)) / (nu + 1.0));
    return 1.0 / (1.0 / lower + 1.0 / upper);
}

/// Rare-outcome limit of lambda_ratio.
inline double lambda0(double beta, double theta, double nu) {
    const double eb = std::exp(beta);
    const double spread = -std::expm1(beta);
    const double mix = 1.0 - theta + eb * theta;
    return 1.0 + nu * theta * (1.0 - theta) / (1.0 + nu) * spread * spread / (mix * mix + nu * eb);
}

/// e_P(T_M, T_A) = {d(gamma + delta)/d gamma}^2 * lambda.
inline double pitman_are_M_vs_A(double alpha, double beta, double theta, double nu) {
    const double slope = bias_slope_at_null(alpha, beta, theta);
    return slope * slope * lambda_ratio(alpha, beta, theta, nu);
}

/// e_P(T_M, T_AC) at finite rho: {d(gamma + delta)/d gamma}^2 * sigma_AC^2 / sigma_M^2,
/// both variances taken at gamma = 0.
inline double pitman_are_M_vs_AC(double alpha, double beta, double theta, double pi, double nu) {
    const double slope = bias_slope_at_null(alpha, beta, theta);
    const PopulationParams null_point{alpha, beta, 0.0, theta, pi};
    return slope * slope * sigma_AC_sq(null_point, nu) / sigma_M_sq(null_point, nu);
}

/// Published second-order coefficient of e_P(T_M, T_AC) = 1 + tau rho^2 + o(rho^2).
inline double pitman_tau(double beta, double theta, double nu) {
    const double em1 = std::expm1(beta);
    const double eb = std::exp(beta);
    const double mix = theta * em1 + 1.0;
    const double inner = (1.0 + 1.0 / nu) * (mix * mix + eb * nu) + 2.0 * (1.0 + std::expm1(2.0 * beta) * theta);
    return -(1.0 - theta) * theta * em1 * em1 * inner / (mix * mix);
}

// ============================================================================
// Power
// ============================================================================

inline double asymptotic_sigma_sq(Method m, const PopulationParams& p, double nu) {
    switch (m) {
    case Method::Mar: return sigma_M_sq(p, nu);
    case Method::Adj: return sigma_A_sq(p, nu);
    case Method::AdjCon: return sigma_AC_sq(p, nu);
    }
    return std::numeric_limits<double>::quiet_NaN();
}

/// Probability limit of the estimator: gamma + delta for Mar, gamma otherwise.
inline double asymptotic_limit(Method m, const PopulationParams& p) {
    return m == Method::Mar ? p.gamma + bias_delta(p.alpha, p.beta, p.gamma, p.theta) : p.gamma;
}

/// Two-sided Wald power with both tails: Phi(-z + m) + Phi(-z - m).
inline double power_from_shift(double shift, double level) {
    const double z = normal_quantile(1.0 - 0.5 * level);
    return normal_cdf(shift - z) + normal_cdf(-shift - z);
}

inline double asymptotic_power(Method m, const PopulationParams& p, double nu, double n, double level) {
    if (!(n > 0.0) || !(level > 0.0 && level < 1.0)) {
        throw Error(ErrorKind::InvalidParams, "asymptotic_power needs n > 0 and level in (0,1)");
    }
    const double shift = std::sqrt(n) * asymptotic_limit(m, p) / std::sqrt(asymptotic_sigma_sq(m, p, nu));
    return power_from_shift(shift, level);
}

// ============================================================================
// Bundles
// ============================================================================

struct AsymptoticConstants {
    double delta = 0.0;
    double b1 = 1.0, b2 = 1.0;
    double rho = 1.0;
    double sigma0_sq = 0.0;
    double lambda = 1.0;
    double lambda0 = 1.0;
    double tau = 0.0;
    std::optional<double> f_star, alpha_star; // empty when beta = 0 or gamma = 0
    double sigmaM_sq = 0.0, sigmaA_sq = 0.0, sigmaAC_sq = 0.0;
};

inline AsymptoticConstants asymptotic_constants(const PopulationParams& p, double nu) {
    AsymptoticConstants c;
    c.delta = bias_delta(p.alpha, p.beta, p.gamma, p.theta);
    const auto bc = bias_coefficients(p.beta, p.theta);
    c.b1 = bc.b1;
    c.b2 = bc.b2;
    c.rho = std::exp(p.alpha);
    c.sigma0_sq = sigma0_sq(p.pi, nu);
    c.lambda = lambda_ratio(p.alpha, p.beta, p.theta, nu);
    c.lambda0 = lambda0(p.beta, p.theta, nu);
    c.tau = pitman_tau(p.beta, p.theta, nu);
    if (p.beta != 0.0 && p.gamma != 0.0) {
        const BiasMinimizer m = bias_minimizer(p.beta, p.gamma, p.theta, p.pi);
        c.f_star = m.f_star;
        c.alpha_star = m.alpha_star;
    }
    c.sigmaM_sq = sigma_M_sq(p, nu);
    c.sigmaA_sq = sigma_A_sq(p, nu);
    c.sigmaAC_sq = sigma_AC_sq(p, nu);
    return c;
}

struct PowerPoint {
    double f = 0.0;
    double alpha = 0.0;
    double n = 0.0;
    double level = 0.05;
    double delta = 0.0;
    double gamma_plus_delta = 0.0;
    double sigma2_M = 0.0, sigma2_A = 0.0, sigma2_AC = 0.0;
    double power_mar = 0.0, power_adj = 0.0, power_adjcon = 0.0;
    double ep_M_vs_A = 1.0, ep_M_vs_AC = 1.0;
    double f_star = std::numeric_limits<double>::quiet_NaN();
    double alpha_star = std::numeric_limits<double>::quiet_NaN();
};

struct CurveInputs {
    double beta = 1.0, gamma = 0.3, theta = 0.4, pi = 0.5;
    double nu = 1.0;
    double n = 5e4;
    double level = 0.05;
};

inline PowerPoint theory_point(double f, const CurveInputs& in) {
    PowerPoint row;
    row.f = f;
    row.n = in.n;
    row.level = in.level;
    row.alpha = alpha_from_prevalence(f, in.beta, in.gamma, in.theta, in.pi);
    const PopulationParams p{row.alpha, in.beta, in.gamma, in.theta, in.pi};
    row.delta = bias_delta(p.alpha, p.beta, p.gamma, p.theta);
    row.gamma_plus_delta = p.gamma + row.delta;
    row.sigma2_M = sigma_M_sq(p, in.nu);
    row.sigma2_A = sigma_A_sq(p, in.nu);
    row.sigma2_AC = sigma_AC_sq(p, in.nu);
    const double rn = std::sqrt(in.n);
    row.power_mar = power_from_shift(rn * row.gamma_plus_delta / std::sqrt(row.sigma2_M), in.level);
    row.power_adj = power_from_shift(rn * p.gamma / std::sqrt(row.sigma2_A), in.level);
    row.power_adjcon = power_from_shift(rn * p.gamma / std::sqrt(row.sigma2_AC), in.level);
    row.ep_M_vs_A = pitman_are_M_vs_A(p.alpha, p.beta, p.theta, in.nu);
    row.ep_M_vs_AC = pitman_are_M_vs_AC(p.alpha, p.beta, p.theta, p.pi, in.nu);
    if (in.beta != 0.0 && in.gamma != 0.0) {
        const BiasMinimizer m = bias_minimizer(in.beta, in.gamma, in.theta, in.pi);
        row.f_star = m.f_star;
        row.alpha_star = m.alpha_star;
    }
    return row;
}

/// One row per prevalence, in grid order. Each row depends only on its own f.
inline std::vector<PowerPoint> theory_curve(const std::vector<double>& f_grid, const CurveInputs& in) {
    std::vector<PowerPoint> rows;
    rows.reserve(f_grid.size());
    for (double f : f_grid) {
        if (!(f > 0.0 && f < 1.0)) {
            throw Error(ErrorKind::InvalidParams, "prevalence grid values must lie in (0,1)");
        }
        rows.push_back(theory_point(f, in));
    }
    return rows;
}

} // namespace ccadj
