#pragma once

#include <array>
#include <cmath>
#include <sstream>

#include "ccadj/error.hpp"
#include "ccadj/model.hpp"

namespace ccadj {

/// Eight nonnegative cell weights w[d][i][j] for (D=d, X=i, E=j). Weights are
/// real so that exact expected tables can be fitted without rounding.
struct CaseControlTable {
    std::array<Grid2, 2> w{};

    double& operator()(int d, int i, int j) { return w[d][i][j]; }
    double operator()(int d, int i, int j) const { return w[d][i][j]; }

    double margin(int d) const { return w[d][0][0] + w[d][0][1] + w[d][1][0] + w[d][1][1]; }
    double n_cases() const { return margin(1); }
    double n_controls() const { return margin(0); }
    double total() const { return margin(0) + margin(1); }
    double nu() const { return n_cases() / n_controls(); }

    /// n_{d+j}
    double collapsed(int d, int j) const { return w[d][0][j] + w[d][1][j]; }
    /// n_{+ij}
    double pooled(int i, int j) const { return w[0][i][j] + w[1][i][j]; }
    double x_total(int i) const { return pooled(i, 0) + pooled(i, 1); }
    double e_total(int j) const { return pooled(0, j) + pooled(1, j); }

    /// Throws ZeroMargin unless weights are nonnegative and both margins positive.
    void validate() const {
        for (int d = 0; d < 2; ++d)
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    if (!(std::isfinite(w[d][i][j]) && w[d][i][j] >= 0.0)) {
                        std::ostringstream os;
                        os << "cell (" << d << "," << i << "," << j << ") has invalid weight " << w[d][i][j];
                        throw Error(ErrorKind::InvalidParams, os.str());
                    }
        if (!(n_cases() > 0.0) || !(n_controls() > 0.0)) {
            throw Error(ErrorKind::ZeroMargin, "case and control margins must both be positive");
        }
    }

    CaseControlTable scaled(double c) const {
        CaseControlTable t = *this;
        for (auto& g : t.w)
            for (auto& r : g)
                for (double& x : r) x *= c;
        return t;
    }

    /// Relabels exposure j <-> 1-j.
    CaseControlTable exposure_flipped() const {
        CaseControlTable t;
        for (int d = 0; d < 2; ++d)
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) t.w[d][i][j] = w[d][i][1 - j];
        return t;
    }
};

/// Expected table n_d * pr(X=i, E=j | D=d) for a design with n subjects split nu:1.
inline CaseControlTable expected_table(const PopulationParams& params, const DesignParams& design) {
    const RetroDistribution r = retro_distribution(params);
    CaseControlTable t;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            t.w[1][i][j] = design.n_cases() * r.p_case[i][j];
            t.w[0][i][j] = design.n_controls() * r.p_ctrl[i][j];
        }
    }
    return t;
}

} // namespace ccadj
