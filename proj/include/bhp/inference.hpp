#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "bhp/dataset.hpp"
#include "bhp/sigma_grid.hpp"
#include "bhp/spectral.hpp"

namespace bhp {

// Inclusive range of grid indices.
struct Window {
    std::size_t first = 0;
    std::size_t last = 0;
};

// Default regression window: starts at the first index whose mean valid
// count reaches start_count, ends at the last index holding any valid entry.
// Throws input_error if the threshold is never reached.
Window default_window(const Dataset& ds, double start_count = 50.0);

// Growth-rate estimate: per-trajectory least-squares slope of log(count)
// against time over the window, averaged across trajectories.
struct AlphaEstimate {
    double alpha_hat = 0.0;
    std::vector<double> per_trajectory_slopes;  // one per used trajectory
    double mean_r2 = 0.0;
    Window window;
    std::size_t n_excluded = 0;  // trajectories with < 2 valid points in window
};

// Trajectories contribute their valid in-window entries; those with fewer
// than two are excluded (counted in n_excluded). Throws input_error when the
// window is empty, a valid in-window count is nonpositive, or no trajectory
// has enough points.
AlphaEstimate estimate_alpha(const Dataset& ds, Window window);

// Which multiple of the grid step to use as the comparison lag: Half aims at
// log2/(2 alpha) (doubling of the variance curve resolved), Full at
// log2/alpha (one population doubling).
enum class DeltaTarget { Half, Full };

// Returns the grid multiple i*grid_step, i >= 1, closest to the target lag;
// ties break toward the smaller i.
double pick_delta(const Dataset& ds, double alpha_hat, DeltaTarget target);

// Empirical variance, across trajectories, of the lag-delta residual
//   r_j(t) = N_j(t+delta) - e^{alpha delta} N_j(t),
// optionally divided by sqrt(N_j(t)) (normalized mode). A (t, t+delta) pair
// with either entry masked drops that trajectory from that time; times with
// fewer than two surviving pairs are omitted.
struct FluctuationSeries {
    double delta = 0.0;
    bool normalized = false;
    std::vector<std::size_t> index;  // dataset grid index of each entry
    std::vector<double> times;
    std::vector<double> variances;
    std::vector<std::size_t> n_used;  // surviving pairs per time
};

FluctuationSeries residual_variance_curve(const Dataset& ds, double alpha_hat, double delta,
                                          bool normalized);

// Least-squares slope of (1/2) log(variance) against time over a window of
// series indices; all in-window variances must be positive.
struct LambdaEstimate {
    double lambda_hat = 0.0;
    double r2 = 0.0;
    Window window;  // indices into the series
};

LambdaEstimate estimate_lambda(const FluctuationSeries& series, Window window);

// Two-regime split on the fluctuation growth rate: Gaussian when 2*lambda
// is within threshold*alpha of alpha, Oscillating otherwise.
struct RegimeDecision {
    double lambda_hat = 0.0;
    double ratio = 0.0;  // |2 lambda - alpha| / alpha
    double threshold = 0.10;
    Regime regime = Regime::Gaussian;
};

RegimeDecision detect_regime(double alpha_hat, double lambda_hat, double threshold = 0.10);

// Final lifetime-parameter estimate. Both estimators keep the growth-rate
// constraint (2^{1/k} - 1)/theta = alpha exact, so mu and cv follow from k.
struct ParamEstimate {
    double k_hat = 0.0;
    double theta_hat = 0.0;
    double mu_hat = 0.0;   // k * theta
    double cv_hat = 0.0;   // 1/sqrt(k)
    Regime regime_used = Regime::Gaussian;
    double argmin_residual = 0.0;  // objective value at the optimum
    double target = 0.0;           // variance target (Gaussian branch only)
    std::vector<std::string> notes;
};

// Gaussian-regime estimator: the target statistic is the mean over the given
// time indices of the variance of sqrt(N)-normalized residuals at lag delta2
// (set normalized_target = false for the scale-biased unnormalized variant,
// kept for comparison only). k is found by sweeping the tabulated curve over
// [grid.min_k, min(grid.max_k, kSigmaWorkingRangeMax)] in steps of mesh/4
// and minimizing |table(k) - target|, ties toward smaller k. Targets more
// than 20% outside the tabulated value range are refused (numeric_error);
// nearer overshoots clamp to the boundary with a note. Requires Absolute
// counts (input_error otherwise).
ParamEstimate infer_gaussian(const Dataset& ds, const SigmaGrid& grid, double alpha_hat,
                             double delta2, const std::vector<std::size_t>& time_indices,
                             bool normalized_target = true);

// Scale-free ratio (2^{1/k} cos(2pi/k) - 1)/(2^{1/k} - 1) = lambda/alpha used
// to invert the oscillating-regime eigenvalue match. Increasing on the
// supercritical branch.
double oscillating_rate_ratio(double k);

// Oscillating-regime estimator: solves oscillating_rate_ratio(k) =
// lambda_hat/alpha_hat for k on (critical shape, 1e4] by bracketed
// root-finding (residual <= 1e-10), then theta from the alpha constraint.
// Ratios outside the attainable range, or solutions within 1e-6 of the
// critical shape, are refused (numeric_error) — the match degenerates there.
// Valid for Proportional data: the ratio is scale-invariant.
ParamEstimate infer_oscillating(double alpha_hat, double lambda_hat);

// Pipeline knobs with the documented defaults.
struct PipelineOptions {
    double window_start_count = 50.0;
    double regime_threshold = 0.10;
    bool normalized_target = true;
};

// Full pipeline result; every intermediate is kept for reporting. When the
// Gaussian branch cannot run (Proportional counts, or no variance table
// supplied), estimate is empty and limitation says why.
struct PipelineReport {
    AlphaEstimate alpha;
    double delta1 = 0.0;
    double delta2 = 0.0;
    FluctuationSeries curve_half;  // unnormalized, at delta1: drives lambda
    FluctuationSeries curve_full;  // normalized, at delta2: Gaussian target
    LambdaEstimate lambda;
    RegimeDecision regime;
    std::optional<ParamEstimate> estimate;
    std::string limitation;
};

// Growth rate -> lag selection -> fluctuation curve -> regime split ->
// regime-specific estimator. grid may be null; it is needed only on the
// Gaussian branch. Errors from each stage are rethrown with the stage name
// prefixed.
PipelineReport run_pipeline(const Dataset& ds, const SigmaGrid* grid,
                            const PipelineOptions& opts = {});

}  // namespace bhp
