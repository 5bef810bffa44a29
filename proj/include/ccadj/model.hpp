#pragma once

// Population model for a binary outcome D, binary exposure E and an
// independent binary covariate X:
//
//   pr(D=1 | X=i, E=j) = sigmoid(alpha + beta*i + gamma*j),
//   pr(X=1) = theta,  pr(E=1) = pi,  X independent of E.
//
// Everything here is exact probability arithmetic; nothing is sampled.

#include <array>
#include <cmath>
#include <sstream>
#include <string>

#include "ccadj/error.hpp"
#include "ccadj/numeric.hpp"

namespace ccadj {

// Coordinates of the full parameter vector v = (alpha, beta, gamma, theta, pi).
enum ParamIndex : int { kAlpha = 0, kBeta = 1, kGamma = 2, kTheta = 3, kPi = 4 };

using Grid2 = std::array<std::array<double, 2>, 2>;

struct ParamBounds {
    double max_abs_coef = 50.0;
    double min_prob = 1e-8;
};

struct PopulationParams {
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
    double theta = 0.5;
    double pi = 0.5;

    /// Throws InvalidParams unless the point lies in the supported box.
    void validate(const ParamBounds& bounds = {}) const;
    double prevalence() const;
};

struct DesignParams {
    double nu = 1.0; // cases per control
    double n = 1.0;  // total subjects
    double nu_min = 1e-6;
    double nu_max = 1e6;

    void validate() const {
        if (!(std::isfinite(nu) && nu >= nu_min && nu <= nu_max)) {
            throw Error(ErrorKind::InvalidParams, "case:control ratio nu outside [nu_min, nu_max]");
        }
        if (!(std::isfinite(n) && n > 0.0)) {
            throw Error(ErrorKind::InvalidParams, "total sample size n must be positive");
        }
    }
    double case_share() const { return nu / (1.0 + nu); }
    double control_share() const { return 1.0 / (1.0 + nu); }
    double n_cases() const { return n * case_share(); }
    double n_controls() const { return n * control_share(); }
};

inline double cell_prob(double alpha, double beta, double gamma, int i, int j) {
    return sigmoid(alpha + beta * i + gamma * j);
}

/// pr(X=i) * pr(E=j) under independence.
inline double covariate_weight(double theta, double pi, int i, int j) {
    return (i ? theta : 1.0 - theta) * (j ? pi : 1.0 - pi);
}

inline double prevalence(double alpha, double beta, double gamma, double theta, double pi) {
    double f = 0.0;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            f += cell_prob(alpha, beta, gamma, i, j) * covariate_weight(theta, pi, i, j);
        }
    }
    return f;
}

inline double prevalence(const PopulationParams& p) {
    return prevalence(p.alpha, p.beta, p.gamma, p.theta, p.pi);
}

inline double PopulationParams::prevalence() const { return ccadj::prevalence(*this); }

inline void PopulationParams::validate(const ParamBounds& b) const {
    std::ostringstream why;
    if (!finite_all({alpha, beta, gamma, theta, pi})) {
        why << "non-finite parameter";
    } else if (std::abs(alpha) > b.max_abs_coef || std::abs(beta) > b.max_abs_coef ||
               std::abs(gamma) > b.max_abs_coef) {
        why << "|alpha|, |beta|, |gamma| must be <= " << b.max_abs_coef;
    } else if (theta < b.min_prob || theta > 1.0 - b.min_prob) {
        why << "theta=" << theta << " outside [" << b.min_prob << ", 1-" << b.min_prob << "]";
    } else if (pi < b.min_prob || pi > 1.0 - b.min_prob) {
        why << "pi=" << pi << " outside [" << b.min_prob << ", 1-" << b.min_prob << "]";
    } else {
        const double f = prevalence();
        if (!(f > 0.0 && f < 1.0)) {
            why << "implied prevalence " << f << " not strictly inside (0,1)";
        } else {
            return;
        }
    }
    throw Error(ErrorKind::InvalidParams, why.str());
}

// ============================================================================
// Prevalence constraint and its inversions
// ============================================================================

/// Solves the prevalence constraint for pr(X=1). The constraint is linear in
/// theta with slope p11*pi + p10*(1-pi) - p01*pi - p00*(1-pi), which vanishes
/// exactly when beta = 0.
inline double theta_from_constraint(double alpha, double beta, double gamma, double pi, double f) {
    const double a1 = cell_prob(alpha, beta, gamma, 1, 1) * pi + cell_prob(alpha, beta, gamma, 1, 0) * (1.0 - pi);
    const double a0 = cell_prob(alpha, beta, gamma, 0, 1) * pi + cell_prob(alpha, beta, gamma, 0, 0) * (1.0 - pi);
    const double slope = a1 - a0;
    if (beta == 0.0 || slope == 0.0) {
        throw Error(ErrorKind::DegenerateConstraint, "theta is not identified by f when beta = 0");
    }
    double theta = (f - a0) / slope;
    // Absorb rounding at the closed ends; anything further out is infeasible.
    constexpr double kEdgeSlack = 1e-12;
    if (theta < 0.0 && theta > -kEdgeSlack) theta = 0.0;
    if (theta > 1.0 && theta < 1.0 + kEdgeSlack) theta = 1.0;
    if (!(theta >= 0.0 && theta <= 1.0)) {
        std::ostringstream os;
        os << "constraint gives theta=" << theta << " for f=" << f;
        throw Error(ErrorKind::InfeasiblePrevalence, os.str());
    }
    return theta;
}

namespace detail {

struct PrevalenceAndSlope {
    double f;
    double dfdalpha;
};

inline PrevalenceAndSlope prevalence_and_slope(double alpha, double beta, double gamma, double theta, double pi) {
    PrevalenceAndSlope out{0.0, 0.0};
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            const double p = cell_prob(alpha, beta, gamma, i, j);
            const double w = covariate_weight(theta, pi, i, j);
            out.f += w * p;
            out.dfdalpha += w * p * (1.0 - p);
        }
    }
    return out;
}

} // namespace detail

/// Intercept alpha(f, s) implied by a prevalence f and s = (beta, gamma, theta, pi).
/// Safeguarded Newton inside a bisection bracket; the prevalence is strictly
/// increasing in alpha so the root is unique.
inline double alpha_from_prevalence(double f, double beta, double gamma, double theta, double pi) {
    if (!(f > 0.0 && f < 1.0) || !finite_all({beta, gamma, theta, pi})) {
        throw Error(ErrorKind::InvalidParams, "alpha_from_prevalence needs f in (0,1) and finite s");
    }
    constexpr double kAlphaLimit = 750.0;
    const double spread = std::abs(beta) + std::abs(gamma);
    double lo = logit(f) - spread;
    double hi = logit(f) + spread;
    auto F = [&](double a) { return prevalence(a, beta, gamma, theta, pi); };

    double step = 1.0;
    while (F(lo) > f) {
        lo -= step;
        step *= 2.0;
        if (lo < -kAlphaLimit) throw Error(ErrorKind::BracketFailure, "lower bracket passed |alpha| = 750");
    }
    step = 1.0;
    while (F(hi) < f) {
        hi += step;
        step *= 2.0;
        if (hi > kAlphaLimit) throw Error(ErrorKind::BracketFailure, "upper bracket passed |alpha| = 750");
    }

    double a = std::clamp(logit(f), lo, hi);
    for (int iter = 0; iter < 200; ++iter) {
        const auto [fa, slope] = detail::prevalence_and_slope(a, beta, gamma, theta, pi);
        const double r = fa - f;
        if (r == 0.0) return a;
        if (r > 0.0) hi = a; else lo = a;

        double next = (slope > 0.0) ? a - r / slope : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - a) <= 4.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(a)) ||
            hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(a))) {
            return next;
        }
        a = next;
    }
    return a;
}

// ============================================================================
// Retrospective (case-control) sampling distribution
// ============================================================================

struct RetroDistribution {
    Grid2 p_case{};  // pr(X=i, E=j | D=1)
    Grid2 p_ctrl{};  // pr(X=i, E=j | D=0)
    double p1_prime = 0.0; // pr(E=1 | D=1)
    double p0_prime = 0.0; // pr(E=1 | D=0)
    Grid2 d_mat{};   // [i][d] = pr(X=i | D=d)
    Grid2 h_mat{};   // [i][d] = pr(E=1 | X=i, D=d)
    double f = 0.0;

    const Grid2& row(int d) const { return d ? p_case : p_ctrl; }
};

inline RetroDistribution retro_distribution(const PopulationParams& p) {
    RetroDistribution r;
    Grid2 case_joint{}, ctrl_joint{};
    double f = 0.0;
    double q = 0.0;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            const double pij = cell_prob(p.alpha, p.beta, p.gamma, i, j);
            const double w = covariate_weight(p.theta, p.pi, i, j);
            // 1 - sigmoid(x) = sigmoid(-x) keeps the control side accurate when pij -> 1
            const double qij = sigmoid(-(p.alpha + p.beta * i + p.gamma * j));
            case_joint[i][j] = pij * w;
            ctrl_joint[i][j] = qij * w;
            f += case_joint[i][j];
            q += ctrl_joint[i][j];
        }
    }
    r.f = f;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            r.p_case[i][j] = case_joint[i][j] / f;
            r.p_ctrl[i][j] = ctrl_joint[i][j] / q;
        }
    }
    r.p1_prime = r.p_case[0][1] + r.p_case[1][1];
    r.p0_prime = r.p_ctrl[0][1] + r.p_ctrl[1][1];
    for (int i = 0; i < 2; ++i) {
        for (int d = 0; d < 2; ++d) {
            const Grid2& g = r.row(d);
            r.d_mat[i][d] = g[i][0] + g[i][1];
            r.h_mat[i][d] = g[i][1] / r.d_mat[i][d];
        }
    }
    return r;
}

// ============================================================================
// Derivatives of the prevalence F(v) over v = (alpha, beta, gamma, theta, pi)
// ============================================================================

struct ScalarDerivatives5 {
    double value = 0.0;
    Vec5 grad = Vec5::Zero();
    Mat5 hess = Mat5::Zero();
};

inline ScalarDerivatives5 prevalence_derivatives(const PopulationParams& p) {
    ScalarDerivatives5 out;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            const double s = cell_prob(p.alpha, p.beta, p.gamma, i, j);
            const double s1 = s * (1.0 - s);
            const double s2 = s1 * (1.0 - 2.0 * s);
            const double m = covariate_weight(p.theta, p.pi, i, j);
            const double m_theta = (2 * i - 1) * (j ? p.pi : 1.0 - p.pi);
            const double m_pi = (2 * j - 1) * (i ? p.theta : 1.0 - p.theta);
            const double m_theta_pi = (2 * i - 1) * (2 * j - 1);
            const Vec3 z(1.0, i, j);

            out.value += s * m;
            out.grad.head<3>() += s1 * m * z;
            out.grad(kTheta) += s * m_theta;
            out.grad(kPi) += s * m_pi;

            out.hess.topLeftCorner<3, 3>() += s2 * m * z * z.transpose();
            out.hess.block<3, 1>(0, kTheta) += s1 * m_theta * z;
            out.hess.block<3, 1>(0, kPi) += s1 * m_pi * z;
            out.hess(kTheta, kPi) += s * m_theta_pi;
        }
    }
    out.hess.block<1, 3>(kTheta, 0) = out.hess.block<3, 1>(0, kTheta).transpose();
    out.hess.block<1, 3>(kPi, 0) = out.hess.block<3, 1>(0, kPi).transpose();
    out.hess(kPi, kTheta) = out.hess(kTheta, kPi);
    return out;
}

/// First and second derivatives of a coordinate x_k(y) defined implicitly by
/// F(v) = const, where y are the remaining four coordinates in index order.
struct ImplicitCoordinate {
    int eliminated = kAlpha;
    std::array<int, 4> free{};
    Vec4 d1 = Vec4::Zero();
    Mat4 d2 = Mat4::Zero();
};

inline std::array<int, 4> free_coordinates(int eliminated) {
    std::array<int, 4> idx{};
    int c = 0;
    for (int k = 0; k < 5; ++k) {
        if (k != eliminated) idx[c++] = k;
    }
    return idx;
}

inline ImplicitCoordinate implicit_coordinate(const ScalarDerivatives5& F, int eliminated) {
    ImplicitCoordinate x;
    x.eliminated = eliminated;
    x.free = free_coordinates(eliminated);
    const double Fk = F.grad(eliminated);
    if (Fk == 0.0) {
        throw Error(ErrorKind::DegenerateConstraint, "prevalence is flat in the eliminated coordinate");
    }
    Vec4 Fy, Fyk;
    Mat4 Fyy;
    for (int a = 0; a < 4; ++a) {
        Fy(a) = F.grad(x.free[a]);
        Fyk(a) = F.hess(x.free[a], eliminated);
        for (int b = 0; b < 4; ++b) Fyy(a, b) = F.hess(x.free[a], x.free[b]);
    }
    const double Fkk = F.hess(eliminated, eliminated);
    x.d1 = -Fy / Fk;
    x.d2 = -(Fyy + Fyk * x.d1.transpose() + x.d1 * Fyk.transpose() + Fkk * x.d1 * x.d1.transpose()) / Fk;
    return x;
}

} // namespace ccadj
