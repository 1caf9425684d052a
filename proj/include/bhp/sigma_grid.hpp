#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bhp/spectral.hpp"

namespace bhp {

// A Monte-Carlo estimate with its standard error.
struct McValue {
    double value = 0.0;
    double std_error = 0.0;
};

// Sampling and quadrature budgets for the variance pipeline.
struct SigmaBudgets {
    std::size_t mc_per_node = 100000;  // descendant-count samples per age node
    std::size_t mc_zeta = 100000;      // lifetime draws per x node
    std::size_t age_nodes = 64;        // Gauss-Legendre nodes for the age integral
    std::size_t x_quadrature = 512;    // Simpson intervals for the x integral
    std::uint64_t seed = 20240501;
};

// E_a[N_delta]: expected count after delta starting from one individual of
// age a, via the integral equation
//   E_a[N_d] = 2 int_0^d m(d-x) g(a+x)/(1-G(a)) dx + (1-G(a+d))/(1-G(a))
// with m = mean_approx; adaptive quadrature to relative tolerance 1e-6.
double cond_mean_age(const GammaLifetime& law, double age, double delta);

// Age-mixture variance component: int Var_a(N_delta) p(a) da over the
// stationary age profile, Var_a estimated by Monte Carlo at each node.
McValue sigma_x(const GammaLifetime& law, double delta, const SigmaBudgets& budgets = {});

// Age-structure fluctuation component:
//   int Var_zeta[ (E_x[N_d]-e^{ad}) 1_{x<zeta} + 2 h(x-zeta) 1_{x>=zeta} ] e^{-ax} dx
// on [0, x_max] with e^{-a x_max} < 1e-8; fresh zeta draws at every node.
McValue sigma_y(const GammaLifetime& law, double delta, const SigmaBudgets& budgets = {});

// Limiting variance sigma_delta^2 = sigma_x + 2*alpha*sigma_y, with the
// two components computed at the same budgets (and the same seeds as the
// individual calls, so the assembly is exactly reproducible).
McValue sigma_total(const GammaLifetime& law, double delta, const SigmaBudgets& budgets = {});

// Closed form at the critical shape:
//   (alpha/k^2) * 2^{2/k}/(2^{2/k}-2^{1/k}) * |e^{(lambda+i tau) d} - e^{alpha d}|^2.
// Requires |shape - critical_shape()| <= 1e-6.
double critical_sigma(const GammaLifetime& law, double delta);

// Upper end of the shape range on which sigma_delta^2 (at delta = log2/alpha)
// can be inverted for the shape. The curve decreases from k = 1 to a shallow
// minimum near k = 44 and then turns up as the spectral gap alpha - 2*lambda
// closes toward the critical shape, so identification from the window
// variance alone is unique only on the decreasing branch.
inline constexpr double kSigmaWorkingRangeMax = 44.0;

// Tabulated sigma_delta^2 over the shape grid {1 + mesh*l}, built at a fixed
// growth-rate convention (alpha = 1, delta = log 2 / alpha by default).
struct SigmaGrid {
    static constexpr int kFormatVersion = 1;

    double mesh = 0.0;
    double alpha_convention = 1.0;
    std::string delta_convention = "log2/alpha";
    std::vector<double> k_values;
    std::vector<double> sigma2;    // total, = sigma2_x + 2*alpha*sigma2_y
    std::vector<double> sigma2_x;
    std::vector<double> sigma2_y;
    std::vector<double> se;        // standard errors, same indexing
    std::vector<double> se_x;
    std::vector<double> se_y;
    SigmaBudgets budgets;
    double max_rel_jump = 0.0;        // smoothness diagnostic
    bool strictly_decreasing = false;  // raw full-range diagnostic; MC noise
                                       // makes this false at fine meshes even
                                       // when the underlying curve is monotone

    double min_k() const { return k_values.front(); }
    double max_k() const { return k_values.back(); }

    // Noise-tolerant monotonicity gate over the working range: for every
    // ordered node pair i < j with k <= kSigmaWorkingRangeMax, sigma2 must not
    // increase by more than max(3*(se_i + se_j), 0.005*sigma2_i). Returns an
    // empty string if the gate passes, else a description of the worst
    // violation.
    std::string working_range_violation() const;
    bool monotone_on_working_range() const { return working_range_violation().empty(); }

    // Piecewise-linear interpolation, exact at nodes; input_error outside
    // [min_k, max_k].
    double lookup(double k) const;
    double lookup_se(double k) const;

    void validate() const;  // structural invariants; throws input_error
};

// Builds the grid over {1 + mesh*l | l in [0, floor((k_c-1)/mesh) - 1]} at
// the given alpha convention. Per-node failures are collected and reported
// together; any failure rejects the whole grid. n_threads = 0 picks the
// hardware concurrency; results are identical for any thread count. The
// progress callback, if set, is invoked after each finished node with
// (nodes_done, nodes_total); it must be thread-safe when n_threads > 1.
SigmaGrid build_grid(double mesh, const SigmaBudgets& budgets = {}, double alpha = 1.0,
                     unsigned n_threads = 0,
                     const std::function<void(std::size_t, std::size_t)>& progress = {});

// Versioned, checksummed JSON persistence. save_grid refuses a grid that
// fails the working-range monotonicity gate unless allow_non_injective is
// set; the raw strictly_decreasing flag is stored but does not block.
void save_grid(const SigmaGrid& grid, const std::string& path,
               bool allow_non_injective = false);
SigmaGrid load_grid(const std::string& path);

// CRC-32 (IEEE 802.3) used by the grid file format; exposed for tests.
std::uint32_t crc32(const std::string& data);

}  // namespace bhp
