#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "bhp/rng.hpp"
#include "bhp/spectral.hpp"

namespace bhp {

// Hard per-trajectory safety limit on the live population, independent of
// any user-requested cap. Exceeding it is a numeric_error.
inline constexpr std::uint64_t kPopulationSafetyCap = 10'000'000;

struct SimConfig {
    std::uint64_t seed = 1;
    double grid_step = 1.0;       // spacing of the recording grid, > 0
    std::size_t n_grid = 2;       // grid runs over i = 0..n_grid, >= 2
    std::optional<std::uint64_t> pop_cap;  // stop recording once reached
    // initial population as (count, age) groups; default one fresh individual
    std::vector<std::pair<std::uint64_t, double>> initial = {{1, 0.0}};

    void validate() const;  // throws input_error on violation
    std::uint64_t initial_count() const;
};

struct Trajectory {
    std::vector<double> times;          // i * grid_step, i = 0..n_grid
    std::vector<std::uint64_t> counts;  // population right after events at times[i]
    // First grid index at or beyond the moment pop_cap was reached. Entries
    // from this index on repeat the capped population size and must be
    // excluded from statistics.
    std::optional<std::size_t> truncated_at;

    std::size_t valid_count() const {
        return truncated_at ? *truncated_at : counts.size();
    }
};

struct Ensemble {
    SimConfig config;
    GammaLifetime law;
    std::vector<Trajectory> trajectories;
};

// One fresh lifetime draw ~ Gamma(k, theta).
double sample_lifetime(Rng& rng, const GammaLifetime& law);

// Remaining lifetime of an individual of the given age, distributed with
// density g(age + x) / (1 - G(age)). Inverse-CDF through the regularized
// incomplete gamma; throws numeric_error when survival(age) underflows.
// The sampler form precomputes the age-dependent constants once.
class ResidualLifetimeSampler {
  public:
    ResidualLifetimeSampler(const GammaLifetime& law, double age);
    double draw(Rng& rng) const;

  private:
    GammaLifetime law_;
    double age_scaled_;     // age / theta
    double tail_at_age_;    // Q(k, age/theta)
    double hazard_guess_;   // asymptotic residual rate used as Newton seed
};

double sample_residual_lifetime(Rng& rng, const GammaLifetime& law, double age);

Trajectory simulate_trajectory(const SimConfig& cfg, const GammaLifetime& law,
                               std::uint64_t replicate_index);

// n_data independent replicates; replicate j is a pure function of
// (cfg.seed, j), so the result is identical for any thread count.
// n_threads = 0 picks the hardware concurrency.
Ensemble simulate_ensemble(const SimConfig& cfg, const GammaLifetime& law, std::size_t n_data,
                           unsigned n_threads = 0);

// Ages of the live population at time t, starting from one age-0 individual.
std::vector<double> population_ages(const GammaLifetime& law, double at_time,
                                    std::uint64_t seed, std::uint64_t stream);

// Sample mean and unbiased variance of the descendant count after `delta`
// time units, starting from one individual of the given age.
std::pair<double, double> moments_from_age(const GammaLifetime& law, double age, double delta,
                                           std::size_t n_mc, Rng& rng);

// NOTE ON EXTENSION: the engine assumes binary splitting only inside
// process_division() in simulate.cpp (each division schedules exactly two
// fresh newborns). A general offspring law would replace that single spot
// with a draw of the offspring count; nothing else in the loop depends on it.

}  // namespace bhp
