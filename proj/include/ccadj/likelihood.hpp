#pragma once

// Log-likelihood of the joint model pr(D | X, E) pr(X) pr(E) on a case-control
// table, and its restriction to the prevalence-constrained manifold.
//
// With f fixed, pr(X, E | D=d) = pr(D=d, X, E) / f_d differs from the joint only
// by a constant, so maximizing the joint on {prevalence = f} is retrospective
// maximum likelihood. The constrained problem is parameterized by
// s = (beta, gamma, theta, pi) with alpha = alpha(f, s) solved implicitly, which
// stays smooth at beta = 0 where the theta-profiled chart is singular.

#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include "ccadj/error.hpp"
#include "ccadj/model.hpp"
#include "ccadj/numeric.hpp"
#include "ccadj/table.hpp"

namespace ccadj {

/// Full log-likelihood over v = (alpha, beta, gamma, theta, pi).
inline ScalarDerivatives5 full_loglik(const CaseControlTable& t, const PopulationParams& v) {
    ScalarDerivatives5 out;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            const double eta = v.alpha + v.beta * i + v.gamma * j;
            const double s = sigmoid(eta);
            const double n_case = t(1, i, j);
            const double n_all = t.pooled(i, j);
            const Vec3 z(1.0, i, j);
            out.value += n_case * eta - n_all * softplus(eta);
            out.grad.head<3>() += (n_case - n_all * s) * z;
            out.hess.topLeftCorner<3, 3>() -= n_all * s * (1.0 - s) * z * z.transpose();
        }
    }
    const double x1 = t.x_total(1), x0 = t.x_total(0);
    const double e1 = t.e_total(1), e0 = t.e_total(0);
    const double th = v.theta, pi = v.pi;
    // 0 * log(0) is taken as 0 so boundary parameters with empty strata stay finite
    auto xlogy = [](double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); };
    out.value += xlogy(x1, th) + xlogy(x0, 1.0 - th) + xlogy(e1, pi) + xlogy(e0, 1.0 - pi);
    out.grad(kTheta) = x1 / th - x0 / (1.0 - th);
    out.grad(kPi) = e1 / pi - e0 / (1.0 - pi);
    out.hess(kTheta, kTheta) = -x1 / (th * th) - x0 / ((1.0 - th) * (1.0 - th));
    out.hess(kPi, kPi) = -e1 / (pi * pi) - e0 / ((1.0 - pi) * (1.0 - pi));
    return out;
}

/// Value, gradient and Hessian of a scalar after eliminating one coordinate
/// through the implicit map x.
struct ChartDerivatives {
    double value = 0.0;
    Vec4 grad = Vec4::Zero();
    Mat4 hess = Mat4::Zero();
};

inline ChartDerivatives reduce_to_chart(const ScalarDerivatives5& L, const ImplicitCoordinate& x) {
    const int k = x.eliminated;
    Vec4 Ly, Lyk;
    Mat4 Lyy;
    for (int a = 0; a < 4; ++a) {
        Ly(a) = L.grad(x.free[a]);
        Lyk(a) = L.hess(x.free[a], k);
        for (int b = 0; b < 4; ++b) Lyy(a, b) = L.hess(x.free[a], x.free[b]);
    }
    ChartDerivatives c;
    c.value = L.value;
    c.grad = Ly + L.grad(k) * x.d1;
    c.hess = Lyy + Lyk * x.d1.transpose() + x.d1 * Lyk.transpose() + L.hess(k, k) * x.d1 * x.d1.transpose() +
             L.grad(k) * x.d2;
    c.hess = symmetrize(c.hess);
    return c;
}

inline PopulationParams params_from_s(double alpha, const Vec4& s) {
    return PopulationParams{alpha, s(0), s(1), s(2), s(3)};
}

inline Vec4 s_from_params(const PopulationParams& p) { return Vec4(p.beta, p.gamma, p.theta, p.pi); }

struct ConstrainedEval {
    double f = 0.0;
    PopulationParams point; // includes the implied alpha
    ImplicitCoordinate alpha_map;
    ChartDerivatives lik;
};

/// Constrained log-likelihood l_f(s) with its analytic gradient and Hessian in s.
inline ConstrainedEval evaluate_constrained(const CaseControlTable& t, double f, const Vec4& s) {
    ConstrainedEval e;
    e.f = f;
    const double alpha = alpha_from_prevalence(f, s(0), s(1), s(2), s(3));
    e.point = params_from_s(alpha, s);
    e.alpha_map = implicit_coordinate(prevalence_derivatives(e.point), kAlpha);
    e.lik = reduce_to_chart(full_loglik(t, e.point), e.alpha_map);
    return e;
}

/// Per-subject score in s for a subject in cell (d, i, j).
inline Vec4 cell_score(const ConstrainedEval& e, int d, int i, int j) {
    const PopulationParams& v = e.point;
    const double resid = d - cell_prob(v.alpha, v.beta, v.gamma, i, j);
    Vec4 g;
    g(0) = resid * i;
    g(1) = resid * j;
    g(2) = i / v.theta - (1 - i) / (1.0 - v.theta);
    g(3) = j / v.pi - (1 - j) / (1.0 - v.pi);
    return g + resid * e.alpha_map.d1;
}

/// Sum over case/control strata of w_d * Cov_d(score). Centering within each
/// stratum is what the fixed case and control totals imply.
inline Mat4 stratified_score_covariance(const CaseControlTable& t, const ConstrainedEval& e) {
    Mat4 b = Mat4::Zero();
    for (int d = 0; d < 2; ++d) {
        const double nd = t.margin(d);
        if (nd <= 0.0) continue;
        Vec4 mean = Vec4::Zero();
        std::array<Vec4, 4> sc;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                sc[2 * i + j] = cell_score(e, d, i, j);
                mean += t(d, i, j) * sc[2 * i + j];
            }
        mean /= nd;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                const Vec4 c = sc[2 * i + j] - mean;
                b += t(d, i, j) * c * c.transpose();
            }
    }
    return symmetrize(b);
}

// ============================================================================
// Constrained maximizer
// ============================================================================

struct SolverOptions {
    int max_iterations = 200;
    double tolerance = 1e-10;       // max |score| per unit of table weight
    double fail_tolerance = 1e-8;   // above this after max_iterations -> NonConvergence
    double boundary = 1e-8;         // theta, pi box edge
    double max_abs_coef = 50.0;
};

struct ConstrainedSolution {
    ConstrainedEval at;
    int iterations = 0;
    bool converged = false;
    double score_norm = 0.0; // max |score| / table weight
};

namespace detail {

// Newton in t = (beta, gamma, logit theta, logit pi) with Armijo backtracking,
// falling back to scaled steepest ascent where the Hessian is not negative definite.
inline ConstrainedSolution newton_constrained(const CaseControlTable& t, double f, Vec4 s, const SolverOptions& opt) {
    const double scale = t.total();
    auto in_domain = [&](const Vec4& c) {
        return std::abs(c(0)) <= opt.max_abs_coef && std::abs(c(1)) <= opt.max_abs_coef && c(2) > 0.0 &&
               c(2) < 1.0 && c(3) > 0.0 && c(3) < 1.0;
    };
    auto to_t = [](const Vec4& c) { return Vec4(c(0), c(1), logit(c(2)), logit(c(3))); };
    auto from_t = [](const Vec4& u) { return Vec4(u(0), u(1), sigmoid(u(2)), sigmoid(u(3))); };

    if (!s.allFinite() || !in_domain(s)) {
        throw Error(ErrorKind::InfeasibleStart, "start point outside the parameter box");
    }
    ConstrainedSolution sol;
    sol.at = evaluate_constrained(t, f, s);
    for (int iter = 0; iter <= opt.max_iterations; ++iter) {
        const ChartDerivatives& L = sol.at.lik;
        sol.iterations = iter;
        sol.score_norm = L.grad.cwiseAbs().maxCoeff() / scale;
        if (sol.score_norm <= opt.tolerance) {
            sol.converged = true;
            return sol;
        }
        if (iter == opt.max_iterations) break;

        const double th = s(2), pi = s(3);
        const Vec4 jac(1.0, 1.0, th * (1.0 - th), pi * (1.0 - pi));
        const Vec4 jac2(0.0, 0.0, th * (1.0 - th) * (1.0 - 2.0 * th), pi * (1.0 - pi) * (1.0 - 2.0 * pi));
        const Vec4 g = jac.cwiseProduct(L.grad);
        Mat4 h = jac.asDiagonal() * L.hess * jac.asDiagonal();
        h.diagonal() += L.grad.cwiseProduct(jac2);

        Vec4 step;
        bool newton = false;
        Eigen::LDLT<Mat4> ldlt(-h);
        if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 0.0) {
            step = ldlt.solve(g);
            newton = true;
        } else {
            step = g / std::max(h.diagonal().cwiseAbs().maxCoeff(), scale);
        }
        const double longest = step.cwiseAbs().maxCoeff();
        if (longest > 5.0) step *= 5.0 / longest;

        const Vec4 u0 = to_t(s);
        const double slope = g.dot(step);
        double lambda = 1.0;
        bool accepted = false;
        for (int k = 0; k < 60; ++k, lambda *= 0.5) {
            const Vec4 cand = from_t(u0 + lambda * step);
            if (!in_domain(cand)) continue;
            ConstrainedEval trial;
            try {
                trial = evaluate_constrained(t, f, cand);
            } catch (const Error&) {
                continue;
            }
            const double gain = trial.lik.value - L.value;
            const bool armijo = gain >= 1e-4 * lambda * slope;
            // Near the optimum the objective is flat to rounding; a full Newton
            // step that shrinks the score is accepted on that basis.
            const bool flat_ok = newton && lambda == 1.0 &&
                                 trial.lik.grad.cwiseAbs().maxCoeff() < L.grad.cwiseAbs().maxCoeff() &&
                                 std::abs(gain) <= 1e-12 * (1.0 + std::abs(L.value));
            if (armijo || flat_ok) {
                s = cand;
                sol.at = trial;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
    }
    sol.converged = sol.score_norm <= opt.tolerance;
    return sol;
}

} // namespace detail

/// Maximizes l_f(s) from a feasible start. Throws NonConvergence when the score
/// cannot be driven below opt.fail_tolerance.
inline ConstrainedSolution maximize_constrained(const CaseControlTable& t, double f, const Vec4& start,
                                                const SolverOptions& opt = {}) {
    if (!(f > 0.0 && f < 1.0)) {
        throw Error(ErrorKind::InfeasiblePrevalence, "prevalence must lie in (0,1)");
    }
    ConstrainedSolution sol;
    try {
        sol = detail::newton_constrained(t, f, start, opt);
    } catch (const Error& e) {
        throw Error(ErrorKind::InfeasibleStart, std::string("start point rejected: ") + e.what());
    }
    if (!sol.converged && sol.score_norm > opt.fail_tolerance) {
        std::ostringstream os;
        os << "score max-norm per unit weight " << sol.score_norm << " after " << sol.iterations << " iterations";
        throw Error(ErrorKind::NonConvergence, os.str());
    }
    return sol;
}

} // namespace ccadj
