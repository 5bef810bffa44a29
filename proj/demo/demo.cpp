// Library walk-through: population point, the three estimators on one sampled
// table, and the asymptotic picture at the same point.

#include <cmath>
#include <cstdio>
#include <string>

#include "ccadj/asymptotics.hpp"
#include "ccadj/estimators.hpp"
#include "ccadj/simulate.hpp"

int main() {
    using namespace ccadj;

    // pi = pr(E=1), theta = pr(X=1); intercept chosen so that pr(D=1) = 0.05
    const double f = 0.05;
    const PopulationParams truth{alpha_from_prevalence(f, 1.0, 0.3, 0.4, 0.5), 1.0, 0.3, 0.4, 0.5};
    const DesignParams design{1.0, 4000}; // 2000 cases, 2000 controls

    std::printf("alpha = %.4f, marginal limit gamma + delta = %.4f\n", truth.alpha,
                truth.gamma + bias_delta(truth.alpha, truth.beta, truth.gamma, truth.theta));

    const CaseControlTable table = sample_table(truth, design, /*seed=*/2024, /*replicate=*/0);
    for (int d = 1; d >= 0; --d)
        std::printf("%s  X0E0 %5.0f  X0E1 %5.0f  X1E0 %5.0f  X1E1 %5.0f\n", d ? "cases   " : "controls", table(d, 0, 0),
                    table(d, 0, 1), table(d, 1, 0), table(d, 1, 1));

    const FitResult fits[] = {fit_marginal(table), fit_adjusted(table), fit_constrained(table, f)};
    std::printf("\n%-7s %9s %9s %9s %9s\n", "method", "gamma", "se", "z", "p");
    for (const FitResult& r : fits) {
        const TestResult w = wald_test(r, 0.05);
        std::printf("%-7s %9.4f %9.4f %9.3f %9.4f\n", std::string(to_string(r.method)).c_str(), r.gamma_hat,
                    r.se_gamma, w.z, w.p_value);
    }

    const AsymptoticConstants c = asymptotic_constants(truth, design.nu);
    std::printf("\nsqrt(n) se from theory: Mar %.3f  Adj %.3f  AdjCon %.3f\n", std::sqrt(c.sigmaM_sq),
                std::sqrt(c.sigmaA_sq), std::sqrt(c.sigmaAC_sq));
    std::printf("power at n = %.0f: Mar %.3f  Adj %.3f  AdjCon %.3f\n", design.n,
                asymptotic_power(Method::Mar, truth, design.nu, design.n, 0.05),
                asymptotic_power(Method::Adj, truth, design.nu, design.n, 0.05),
                asymptotic_power(Method::AdjCon, truth, design.nu, design.n, 0.05));
    return 0;
}
