#pragma once

// Small numeric building blocks shared by every module: stable logistic
// transforms, the standard normal, and dense symmetric helpers.

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

namespace ccadj {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat5 = Eigen::Matrix<double, 5, 5>;

// Branch form: never evaluates exp of a positive argument.
inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + e^x)
inline double softplus(double x) {
    if (x > 0.0) {
        return x + std::log1p(std::exp(-x));
    }
    return std::log1p(std::exp(x));
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Upper tail 1 - Phi(x), accurate for large x.
inline double normal_sf(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

inline double normal_quantile(double p) {
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

/// Smallest eigenvalue of a symmetric matrix.
template <class Derived>
double min_eigenvalue(const Eigen::MatrixBase<Derived>& m) {
    using Plain = typename Derived::PlainObject;
    Eigen::SelfAdjointEigenSolver<Plain> es(m.eval(), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

template <class Derived>
typename Derived::PlainObject symmetrize(const Eigen::MatrixBase<Derived>& m) {
    return (0.5 * (m + m.transpose())).eval();
}

inline bool finite_all(std::initializer_list<double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

} // namespace ccadj
