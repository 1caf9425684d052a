#pragma once

#include <complex>
#include <optional>
#include <vector>

#include "bhp/errors.hpp"

namespace bhp {

// Gamma(k, theta) lifetime law. The model restricts to shape k >= 1:
// below that the hazard diverges at age 0 and the regime theory does not
// apply, so the constructor rejects it outright.
struct GammaLifetime {
    double shape;  // k, dimensionless
    double scale;  // theta, time units

    GammaLifetime(double k, double theta) : shape(k), scale(theta) {
        if (!(k >= 1.0)) throw input_error("GammaLifetime: shape must be >= 1");
        if (!(theta > 0.0)) throw input_error("GammaLifetime: scale must be > 0");
    }

    double mean() const { return shape * scale; }
    double cv() const { return 1.0 / std::sqrt(shape); }
};

enum class Regime { Gaussian, Critical, Oscillating };

// Spectral summary of a law: growth rate, subdominant eigenvalue (when it
// exists), the full root set of the characteristic equation, and the regime.
struct SpectralData {
    double alpha = 0.0;
    std::optional<std::complex<double>> second;  // lambda + i tau, shape >= 2 only
    std::vector<std::complex<double>> eigenvalues;
    Regime regime = Regime::Gaussian;
    double critical_shape = 0.0;
};

// Lifetime density g(t) and survival function 1 - G(t).
double density(const GammaLifetime& law, double t);
double survival(const GammaLifetime& law, double a);

// Laplace transform of g at complex rho: 1/(1 + rho*theta)^k on the
// principal branch. Throws at the pole rho = -1/theta.
std::complex<double> lifetime_laplace(const GammaLifetime& law, std::complex<double> rho);

// Malthusian growth rate: the real root of L[g](alpha) = 1/2.
double malthusian_alpha(const GammaLifetime& law);

// Subdominant root lambda + i*tau of L[g](rho) = 1/2 (largest real part
// below alpha). Defined for shape >= 2; below that the root set is {alpha}.
std::complex<double> second_eigenvalue(const GammaLifetime& law);

// All roots of the characteristic equation:
//   (2^{1/k} e^{2*pi*i*l/k} - 1)/theta  for l in [-ceil(k/2)+1, floor(k/2)],
// sorted by descending real part (alpha first). Shapes within 1e-9 of an
// integer use that integer's index range, which is the analytic limit.
std::vector<std::complex<double>> eigenvalue_set(const GammaLifetime& law);

// Critical shape k_c: unique root of 2*cos(2*pi/k) = 2^{-1/k} + 1 in [10, 100].
double critical_shape();

// Regime of a shape parameter relative to k_c (|k - k_c| <= 1e-9 counts as
// critical). Throws for k < 1.
Regime classify_regime(double shape);

SpectralData spectral_data(const GammaLifetime& law);

// Mean population size started from one age-0 individual: the finite sum of
// eigen-mode contributions plus, for non-integer shape, the branch-cut
// remainder of the Laplace inversion (mean_cut_correction). Exact for every
// shape up to quadrature tolerance.
double mean_approx(const GammaLifetime& law, double t);

// Branch-cut remainder of the mean's Laplace inversion. For non-integer
// shape the lifetime transform has a cut along rho <= -1/theta; the mode sum
// alone misses its contribution
//   C(t) = -sin(pi k)/pi * int_0^inf e^{-(1+u) t/theta} u^k
//          / ((1+u)(u^{2k} - 4 u^k cos(pi k) + 4)) du,
// an O(e^{-t/theta}) term that is largest at small t and small k. Identically
// zero for integer shape. Evaluated by adaptive quadrature after a
// substitution that removes the near-integer Lorentzian peak.
double mean_cut_correction(const GammaLifetime& law, double t);

// h(y) = mean_approx(y + delta) - e^{alpha*delta} * mean_approx(y) for
// y >= 0 (0 for y < 0). The mode part sums only the sub-dominant modes, so
// the alpha mode cancels exactly instead of catastrophically; the cut
// remainders are added for non-integer shape.
double h_delta(const GammaLifetime& law, double y, double delta);

// Stationary age density p(a) = 2*alpha*e^{-alpha*a}*(1 - G(a)); the
// normalizer is closed-form because L[g](alpha) = 1/2.
double stationary_age_density(const GammaLifetime& law, double a);

// Limit of Var(N_t)/E[N_t]^2 as a function of the lifetime CV.
double var_ratio_q(double cv);

}  // namespace bhp
