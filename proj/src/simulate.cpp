#include "bhp/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <string>
#include <thread>

#include "bhp/special_functions.hpp"

namespace bhp {

namespace {

// A scheduled division. The birth time is carried so that ages of the live
// population can be read off the queue, and as a deterministic tie-break.
struct Event {
    double division_time;
    double birth_time;
    bool operator>(const Event& o) const {
        if (division_time != o.division_time) return division_time > o.division_time;
        return birth_time > o.birth_time;
    }
};

using EventQueue = std::priority_queue<Event, std::vector<Event>, std::greater<Event>>;

}  // namespace

void SimConfig::validate() const {
    if (!(grid_step > 0.0)) throw input_error("SimConfig: grid_step must be > 0");
    if (n_grid < 2) throw input_error("SimConfig: n_grid must be >= 2");
    if (pop_cap && *pop_cap == 0) throw input_error("SimConfig: pop_cap must be positive");
    if (initial.empty()) throw input_error("SimConfig: initial population is empty");
    std::uint64_t total = 0;
    for (const auto& [count, age] : initial) {
        if (count == 0) throw input_error("SimConfig: initial group with zero count");
        if (!(age >= 0.0)) throw input_error("SimConfig: initial age must be >= 0");
        total += count;
    }
    if (total == 0) throw input_error("SimConfig: total initial count must be >= 1");
}

std::uint64_t SimConfig::initial_count() const {
    std::uint64_t total = 0;
    for (const auto& [count, age] : initial) total += count;
    return total;
}

double sample_lifetime(Rng& rng, const GammaLifetime& law) {
    return rng.gamma(law.shape, law.scale);
}

ResidualLifetimeSampler::ResidualLifetimeSampler(const GammaLifetime& law, double age)
    : law_(law), age_scaled_(age / law.scale), tail_at_age_(0.0), hazard_guess_(0.0) {
    if (!(age >= 0.0)) throw input_error("residual lifetime: age must be >= 0");
    tail_at_age_ = gamma_q(law.shape, age_scaled_);
    if (tail_at_age_ <= 0.0)
        throw numeric_error("residual lifetime: survival underflows at this age");
    // Asymptotic residual division rate in scaled units: the gamma hazard
    // approaches 1 - (k-1)/z from below; clamp for small z.
    hazard_guess_ = std::max(0.1, 1.0 - (law.shape - 1.0) / std::max(age_scaled_, law.shape));
}

double ResidualLifetimeSampler::draw(Rng& rng) const {
    const double u = rng.uniform_pos();  // in (0, 1)
    const double target = tail_at_age_ * (1.0 - u);  // solve Q(k, z) = target, z >= z_a

    // Bracket: Q is strictly decreasing, target < Q(z_a).
    double lo = age_scaled_;
    double hi = age_scaled_ + std::max(1.0, -std::log1p(-u) / hazard_guess_);
    while (gamma_q(law_.shape, hi) > target) {
        lo = hi;
        hi = age_scaled_ + 2.0 * (hi - age_scaled_) + 1.0;
        if (hi > age_scaled_ + 1e6)
            throw numeric_error("residual lifetime: bracketing failed");
    }

    // Safeguarded Newton on f(z) = Q(k, z) - target within [lo, hi].
    double z = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        const double f = gamma_q(law_.shape, z) - target;
        (f > 0.0 ? lo : hi) = z;
        const double log_pdf = (law_.shape - 1.0) * std::log(z) - z - std::lgamma(law_.shape);
        const double deriv = -std::exp(log_pdf);  // dQ/dz
        double z_next = z - f / deriv;
        if (!(z_next > lo) || !(z_next < hi)) z_next = 0.5 * (lo + hi);
        const double step = std::abs(z_next - z);
        z = z_next;
        if (step <= 1e-12 * std::max(1.0, z)) break;
    }
    const double residual = (z - age_scaled_) * law_.scale;
    return std::max(residual, std::numeric_limits<double>::min());
}

double sample_residual_lifetime(Rng& rng, const GammaLifetime& law, double age) {
    if (age == 0.0) return sample_lifetime(rng, law);
    return ResidualLifetimeSampler(law, age).draw(rng);
}

Trajectory simulate_trajectory(const SimConfig& cfg, const GammaLifetime& law,
                               std::uint64_t replicate_index) {
    cfg.validate();
    Rng rng(cfg.seed, replicate_index);

    Trajectory out;
    out.times.resize(cfg.n_grid + 1);
    for (std::size_t i = 0; i <= cfg.n_grid; ++i)
        out.times[i] = static_cast<double>(i) * cfg.grid_step;
    out.counts.assign(cfg.n_grid + 1, 0);

    EventQueue queue;
    for (const auto& [count, age] : cfg.initial) {
        if (age == 0.0) {
            for (std::uint64_t c = 0; c < count; ++c)
                queue.push({sample_lifetime(rng, law), 0.0});
        } else {
            const ResidualLifetimeSampler sampler(law, age);
            for (std::uint64_t c = 0; c < count; ++c)
                queue.push({sampler.draw(rng), -age});
        }
    }

    std::uint64_t population = cfg.initial_count();
    const std::uint64_t cap = cfg.pop_cap.value_or(kPopulationSafetyCap + 1);
    const double horizon = out.times.back();
    std::size_t next_grid = 0;

    if (population >= cap) {
        out.truncated_at = 0;
        std::fill(out.counts.begin(), out.counts.end(), population);
        return out;
    }

    while (true) {
        const Event ev = queue.top();
        // Record every grid point strictly before the next event; the count
        // at a grid time includes all events at exactly that time.
        while (next_grid <= cfg.n_grid && out.times[next_grid] < ev.division_time) {
            out.counts[next_grid] = population;
            ++next_grid;
        }
        if (next_grid > cfg.n_grid || ev.division_time > horizon) break;

        // Binary split: the divider is replaced by two fresh newborns.
        // (Extension seam: a general offspring law would change the +1 and
        // the two pushes below, nothing else.)
        queue.pop();
        queue.push({ev.division_time + sample_lifetime(rng, law), ev.division_time});
        queue.push({ev.division_time + sample_lifetime(rng, law), ev.division_time});
        ++population;

        if (population > kPopulationSafetyCap)
            throw numeric_error("trajectory exceeded the population safety cap");
        if (population >= cap) {
            out.truncated_at = next_grid;
            for (std::size_t i = next_grid; i <= cfg.n_grid; ++i) out.counts[i] = population;
            return out;
        }
    }
    // Horizon reached: any remaining grid points saw no further events.
    for (std::size_t i = next_grid; i <= cfg.n_grid; ++i) out.counts[i] = population;
    return out;
}

Ensemble simulate_ensemble(const SimConfig& cfg, const GammaLifetime& law, std::size_t n_data,
                           unsigned n_threads) {
    cfg.validate();
    if (n_data < 1) throw input_error("simulate_ensemble: n_data must be >= 1");
    if (n_threads == 0) n_threads = std::max(1u, std::thread::hardware_concurrency());
    n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(n_data));

    Ensemble ens{cfg, law, std::vector<Trajectory>(n_data)};
    std::vector<std::string> failures(n_threads);
    std::vector<int> failure_kind(n_threads, 0);  // 0 none, 2 input, 3 numeric

    auto worker = [&](unsigned tid) {
        for (std::size_t j = tid; j < n_data; j += n_threads) {
            try {
                ens.trajectories[j] = simulate_trajectory(cfg, law, j);
            } catch (const input_error& e) {
                failure_kind[tid] = 2;
                failures[tid] = "replicate " + std::to_string(j) + ": " + e.what();
                return;
            } catch (const std::exception& e) {
                failure_kind[tid] = 3;
                failures[tid] = "replicate " + std::to_string(j) + ": " + e.what();
                return;
            }
        }
    };

    if (n_threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_threads);
        for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker, t);
        for (auto& th : pool) th.join();
    }
    for (unsigned t = 0; t < n_threads; ++t) {
        if (failure_kind[t] == 2) throw input_error(failures[t]);
        if (failure_kind[t] == 3) throw numeric_error(failures[t]);
    }
    return ens;
}

std::vector<double> population_ages(const GammaLifetime& law, double at_time,
                                    std::uint64_t seed, std::uint64_t stream) {
    if (!(at_time >= 0.0)) throw input_error("population_ages: time must be >= 0");
    Rng rng(seed, stream);
    EventQueue queue;
    queue.push({sample_lifetime(rng, law), 0.0});
    std::uint64_t population = 1;
    while (queue.top().division_time <= at_time) {
        const Event ev = queue.top();
        queue.pop();
        queue.push({ev.division_time + sample_lifetime(rng, law), ev.division_time});
        queue.push({ev.division_time + sample_lifetime(rng, law), ev.division_time});
        if (++population > kPopulationSafetyCap)
            throw numeric_error("population exceeded the safety cap");
    }
    std::vector<double> ages;
    ages.reserve(population);
    while (!queue.empty()) {
        ages.push_back(at_time - queue.top().birth_time);
        queue.pop();
    }
    return ages;
}

namespace {

// Descendants alive `remaining` after the birth of one fresh individual.
// Depth-first with an explicit budget so pathological parameters fail
// loudly instead of exhausting memory or stack.
std::uint64_t count_from_fresh(const GammaLifetime& law, double remaining, Rng& rng,
                               std::uint64_t& budget, int depth) {
    if (depth > 100000) throw numeric_error("descendant recursion too deep");
    const double life = sample_lifetime(rng, law);
    if (life > remaining) return 1;
    if (budget == 0) throw numeric_error("descendant count exceeded the safety cap");
    --budget;
    const double left = remaining - life;
    return count_from_fresh(law, left, rng, budget, depth + 1) +
           count_from_fresh(law, left, rng, budget, depth + 1);
}

}  // namespace

std::pair<double, double> moments_from_age(const GammaLifetime& law, double age, double delta,
                                           std::size_t n_mc, Rng& rng) {
    if (!(delta > 0.0)) throw input_error("moments_from_age: delta must be > 0");
    if (n_mc < 2) throw input_error("moments_from_age: need at least two samples");
    const ResidualLifetimeSampler sampler(law, age);

    // Counts are small integers; exact integer power sums keep the variance
    // free of accumulation error.
    std::uint64_t sum = 0;
    unsigned __int128 sum_sq = 0;
    for (std::size_t i = 0; i < n_mc; ++i) {
        std::uint64_t budget = kPopulationSafetyCap;
        const double first =
            age == 0.0 ? sample_lifetime(rng, law) : sampler.draw(rng);
        std::uint64_t n = 1;
        if (first <= delta) {
            --budget;
            n = count_from_fresh(law, delta - first, rng, budget, 0) +
                count_from_fresh(law, delta - first, rng, budget, 0);
        }
        sum += n;
        sum_sq += static_cast<unsigned __int128>(n) * n;
    }
    const double nd = static_cast<double>(n_mc);
    const double mean = static_cast<double>(sum) / nd;
    const double ss = static_cast<double>(sum_sq);
    const double variance = std::max(0.0, (ss - nd * mean * mean) / (nd - 1.0));
    return {mean, variance};
}

}  // namespace bhp
