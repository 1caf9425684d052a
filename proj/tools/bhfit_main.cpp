// bhfit: simulate gamma-lifetime branching processes and infer the lifetime
// shape/scale from population time series.
//
// Exit codes: 0 success (and selftest all-pass), 1 selftest failure or
// unexpected error, 2 invalid input, 3 numeric failure, 4 I/O failure.

#include <cmath>
#include <complex>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bhp/dataset.hpp"
#include "bhp/errors.hpp"
#include "bhp/inference.hpp"
#include "bhp/quadrature.hpp"
#include "bhp/sigma_grid.hpp"
#include "bhp/simulate.hpp"
#include "bhp/spectral.hpp"
#include "json.hpp"
#include "report.hpp"

namespace {

using nlohmann::ordered_json;

constexpr double kLn2 = 0.6931471805599453;

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
    double k = 0.0;
    double theta = 0.0;
    std::uint64_t seed = 1;
    double delta_step = 0.0;  // 0 = auto: log2 / (8 alpha)
    std::size_t n_grid = 128;
    std::uint64_t pop_cap = 8000;  // 0 = uncapped
    std::size_t n_data = 1;
    std::string count_mode = "absolute";
    std::string units = "time";
    std::string out;
    unsigned threads = 0;
};

int run_simulate(const SimulateArgs& a) {
    const bhp::GammaLifetime law(a.k, a.theta);
    bhp::SimConfig cfg;
    cfg.seed = a.seed;
    cfg.grid_step = a.delta_step > 0.0
                        ? a.delta_step
                        : kLn2 / (8.0 * bhp::malthusian_alpha(law));
    cfg.n_grid = a.n_grid;
    if (a.pop_cap > 0) cfg.pop_cap = a.pop_cap;
    cfg.validate();

    const auto ens = bhp::simulate_ensemble(cfg, law, a.n_data, a.threads);

    std::string provenance = "bhfit simulate --k " + fmt(a.k) + " --theta " + fmt(a.theta) +
                             " --seed " + std::to_string(a.seed) + " --delta-step " +
                             fmt(cfg.grid_step) + " --n-grid " + std::to_string(a.n_grid) +
                             " --pop-cap " + std::to_string(a.pop_cap) + " --n-data " +
                             std::to_string(a.n_data);
    auto ds = bhp::dataset_from_ensemble(ens, a.units, std::move(provenance));
    if (a.count_mode == "proportional") ds.count_mode = bhp::CountMode::Proportional;
    bhp::write_dataset(ds, a.out);

    std::size_t n_capped = 0;
    for (const auto& tr : ens.trajectories)
        if (tr.truncated_at) ++n_capped;
    std::printf("wrote %s: %zu trajectories x %zu times (grid step %.10g", a.out.c_str(),
                ds.n_data(), ds.n_times(), ds.grid_step);
    if (n_capped > 0)
        std::printf("; %zu reached the population cap and are masked from there on", n_capped);
    std::printf(")\n");
    return 0;
}

// -------------------------------------------------------------- sigma-table

struct SigmaTableArgs {
    double mesh = 0.0;
    double alpha = 1.0;
    bhp::SigmaBudgets budgets;
    std::string out;
    unsigned threads = 0;
    bool force = false;
};

int run_sigma_table(const SigmaTableArgs& a) {
    const auto grid = bhp::build_grid(
        a.mesh, a.budgets, a.alpha, a.threads, [](std::size_t done, std::size_t total) {
            if (done % 10 == 0 || done == total) {
                std::fprintf(stderr, "[sigma-table] %zu/%zu nodes\n", done, total);
                std::fflush(stderr);
            }
        });
    bhp::save_grid(grid, a.out, a.force);

    const std::string gate = grid.working_range_violation();
    std::printf("wrote %s: %zu nodes on [%.10g, %.10g], mesh %.10g\n", a.out.c_str(),
                grid.k_values.size(), grid.min_k(), grid.max_k(), grid.mesh);
    std::printf("monotonicity gate on the working range [%.10g, %.10g]: %s\n", grid.min_k(),
                std::min(grid.max_k(), bhp::kSigmaWorkingRangeMax),
                gate.empty() ? "pass" : ("OVERRIDDEN (--force): " + gate).c_str());
    std::printf("largest relative jump between neighbors: %.3g\n", grid.max_rel_jump);
    return 0;
}

// -------------------------------------------------------------------- infer

struct InferArgs {
    std::string dataset;
    std::string grid_file;
    std::string out;
    bhp::PipelineOptions opts;
};

int run_infer(const InferArgs& a) {
    const bhp::Dataset ds = bhp::read_dataset(a.dataset);
    std::optional<bhp::SigmaGrid> grid;
    if (!a.grid_file.empty()) grid = bhp::load_grid(a.grid_file);

    const auto rep = bhp::run_pipeline(ds, grid ? &*grid : nullptr, a.opts);

    ordered_json echo;
    echo["command"] = "infer";
    echo["dataset"] = a.dataset;
    echo["grid_file"] = a.grid_file.empty() ? ordered_json(nullptr) : ordered_json(a.grid_file);
    echo["out"] = a.out;
    echo["window_start_count"] = a.opts.window_start_count;
    echo["regime_threshold"] = a.opts.regime_threshold;
    echo["normalized_target"] = a.opts.normalized_target;

    const auto report = bhfit::make_report(echo, ds, rep);
    bhfit::write_text_file(a.out + ".report.json", report.dump(2) + "\n");
    bhfit::write_text_file(a.out + ".logcounts.tsv", bhfit::logcounts_tsv(ds));
    bhfit::write_text_file(a.out + ".residuals.tsv",
                           bhfit::residuals_tsv(ds, rep.alpha.alpha_hat, rep.delta1));
    bhfit::write_text_file(a.out + ".variance.tsv",
                           bhfit::variance_tsv(rep.curve_half, rep.lambda));

    std::printf("alpha_hat  = %.8g   (mean R^2 %.4f, window [%zu, %zu], %zu trajectories)\n",
                rep.alpha.alpha_hat, rep.alpha.mean_r2, rep.alpha.window.first,
                rep.alpha.window.last, rep.alpha.per_trajectory_slopes.size());
    std::printf("lags       = %.8g (half), %.8g (full)\n", rep.delta1, rep.delta2);
    std::printf("lambda_hat = %.8g   (R^2 %.4f)\n", rep.lambda.lambda_hat, rep.lambda.r2);
    std::printf("regime     = %s   (|2 lambda - alpha| / alpha = %.4f, threshold %.2f)\n",
                rep.regime.regime == bhp::Regime::Gaussian ? "Gaussian" : "Oscillating",
                rep.regime.ratio, rep.regime.threshold);
    if (rep.estimate) {
        const auto& e = *rep.estimate;
        std::printf("k_hat = %.6g   theta_hat = %.6g %s\n", e.k_hat, e.theta_hat,
                    ds.units.c_str());
        std::printf("mu_hat (mean lifetime) = %.6g %s   cv_hat = %.4f%%\n", e.mu_hat,
                    ds.units.c_str(), 100.0 * e.cv_hat);
        for (const auto& n : e.notes) std::printf("note: %s\n", n.c_str());
    } else {
        std::printf("no parameter estimate: %s\n", rep.limitation.c_str());
    }
    std::printf("wrote %s.report.json / .logcounts.tsv / .residuals.tsv / .variance.tsv\n",
                a.out.c_str());

    // A Gaussian-regime dataset without a variance table is a missing input:
    // the caller can fix it by building a grid. A Proportional-mode dataset
    // in the Gaussian regime is a property of the data itself, honestly
    // reported in the report, so it still exits 0.
    if (rep.regime.regime == bhp::Regime::Gaussian && !rep.estimate && !grid) {
        std::fprintf(stderr, "error: %s\n", rep.limitation.c_str());
        return 2;
    }
    return 0;
}

// ----------------------------------------------------------------- selftest

struct SelftestArgs {
    std::string grid_file;
};

int run_selftest(const SelftestArgs& a) {
    struct Check {
        std::string name;
        std::string detail;  // empty = pass
        bool skipped = false;
    };
    std::vector<Check> checks;
    auto run = [&checks](const std::string& name, auto&& fn) {
        Check c{name, "", false};
        try {
            c.detail = fn();
        } catch (const std::exception& e) {
            c.detail = e.what();
        }
        checks.push_back(std::move(c));
    };

    run("laplace half-identity at the growth rate", []() -> std::string {
        double worst = 0.0;
        for (const auto& [k, theta] : std::vector<std::pair<double, double>>{
                 {1, 1}, {2, 1}, {4, 1}, {35, 1}, {70, 0.25}, {200.5, 3}}) {
            const bhp::GammaLifetime law(k, theta);
            const double alpha = bhp::malthusian_alpha(law);
            if (!(alpha > 0.0)) return "nonpositive growth rate at shape " + fmt(k);
            worst = std::max(worst,
                             std::abs(bhp::lifetime_laplace(law, alpha).real() - 0.5));
        }
        return worst <= 1e-12 ? "" : "worst residual " + fmt(worst) + " > 1e-12";
    });

    run("critical shape and regime split", []() -> std::string {
        const double kc = bhp::critical_shape();
        if (std::abs(kc - 57.24) > 0.01)
            return "critical shape " + fmt(kc) + " not within 0.01 of 57.24";
        if (bhp::classify_regime(35.0) != bhp::Regime::Gaussian)
            return "shape 35 did not classify Gaussian";
        if (bhp::classify_regime(70.0) != bhp::Regime::Oscillating)
            return "shape 70 did not classify Oscillating";
        if (bhp::classify_regime(kc) != bhp::Regime::Critical)
            return "the critical shape did not classify Critical";
        return "";
    });

    run("second eigenvalue solves the root equation", []() -> std::string {
        double worst = 0.0;
        for (double k : {2.0, 35.0, 70.0, 200.5}) {
            const bhp::GammaLifetime law(k, 1.0);
            const auto rho = bhp::second_eigenvalue(law);
            if (!(rho.real() < bhp::malthusian_alpha(law)))
                return "second eigenvalue not below the growth rate at shape " + fmt(k);
            worst = std::max(worst, std::abs(bhp::lifetime_laplace(law, rho) - 0.5));
        }
        return worst <= 1e-10 ? "" : "worst residual " + fmt(worst) + " > 1e-10";
    });

    run("stationary age profile integrates to 1", []() -> std::string {
        double worst = 0.0;
        for (double k : {10.0, 30.0, 50.0})
            for (double theta : {1.0, 2.0}) {
                const bhp::GammaLifetime law(k, theta);
                const double alpha = bhp::malthusian_alpha(law);
                const double a_max = std::log(2e9) / alpha;
                const double mass = bhp::integrate(
                    [&](double age) { return bhp::stationary_age_density(law, age); }, 0.0,
                    a_max, 1e-10);
                worst = std::max(worst, std::abs(mass - 1.0));
            }
        return worst <= 1e-6 ? "" : "worst normalization error " + fmt(worst) + " > 1e-6";
    });

    run("simulator is deterministic in the seed", []() -> std::string {
        bhp::SimConfig cfg;
        cfg.seed = 321;
        cfg.grid_step = 0.5;
        cfg.n_grid = 6;
        const bhp::GammaLifetime law(4.0, 1.0);
        const auto e1 = bhp::simulate_ensemble(cfg, law, 20);
        const auto e2 = bhp::simulate_ensemble(cfg, law, 20);
        for (std::size_t j = 0; j < 20; ++j)
            if (e1.trajectories[j].counts != e2.trajectories[j].counts)
                return "replicate " + std::to_string(j) + " differs between identical runs";
        return "";
    });

    run("memoryless fluctuation oracle (variance/mean -> 2)", []() -> std::string {
        bhp::SimConfig cfg;
        cfg.seed = 20240817;
        cfg.grid_step = kLn2;  // one doubling per step at unit rate
        cfg.n_grid = 9;
        const bhp::GammaLifetime law(1.0, 1.0);
        const auto ds = bhp::dataset_from_ensemble(bhp::simulate_ensemble(cfg, law, 2000));
        const auto curve = bhp::residual_variance_curve(ds, 1.0, kLn2, false);
        const std::size_t last = curve.times.size() - 1;
        double mean_n = 0.0;
        for (const auto& row : ds.counts) mean_n += row[curve.index[last]];
        mean_n /= static_cast<double>(ds.n_data());
        const double ratio = curve.variances[last] / mean_n;
        return std::abs(ratio - 2.0) <= 0.2
                   ? ""
                   : "variance/mean ratio " + fmt(ratio) + " not within 10% of 2";
    });

    if (a.grid_file.empty()) {
        checks.push_back({"variance-table file checks", "no --grid-file supplied", true});
    } else {
        run("variance-table file checks", [&a]() -> std::string {
            const auto grid = bhp::load_grid(a.grid_file);
            grid.validate();
            if (std::abs(grid.alpha_convention - 1.0) > 1e-12)
                return "table was built at growth-rate convention " +
                       fmt(grid.alpha_convention) + ", expected 1";
            const std::string gate = grid.working_range_violation();
            if (!gate.empty()) return gate;
            const double hi = std::min(grid.max_k(), bhp::kSigmaWorkingRangeMax);
            if (!(grid.lookup(grid.min_k()) >= grid.lookup(hi)))
                return "table does not decrease across the working range";
            return "";
        });
    }

    bool all_pass = true;
    std::size_t n_pass = 0, n_run = 0;
    for (const auto& c : checks) {
        if (c.skipped) {
            std::printf("SKIP  %s (%s)\n", c.name.c_str(), c.detail.c_str());
            continue;
        }
        ++n_run;
        if (c.detail.empty()) {
            ++n_pass;
            std::printf("PASS  %s\n", c.name.c_str());
        } else {
            all_pass = false;
            std::printf("FAIL  %s: %s\n", c.name.c_str(), c.detail.c_str());
        }
    }
    std::printf("selftest: %zu/%zu checks passed\n", n_pass, n_run);
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "bhfit: gamma-lifetime branching-process simulation and two-regime "
        "lifetime inference from population time series"};
    app.require_subcommand(1);
    app.set_config("--config", "",
                   "key=value configuration file; put options for a command under a "
                   "[<command>] section; command-line flags override file values");
    app.set_version_flag("--version", "bhfit 1.0.0");

    SimulateArgs sim;
    auto* c_sim = app.add_subcommand("simulate", "simulate an ensemble and write a dataset");
    c_sim->add_option("--k", sim.k, "lifetime shape parameter (>= 1)")->required();
    c_sim->add_option("--theta", sim.theta, "lifetime scale parameter (> 0)")->required();
    c_sim->add_option("--seed", sim.seed, "RNG seed (same seed, same file)")
        ->capture_default_str();
    c_sim->add_option("--delta-step", sim.delta_step,
                      "recording grid step; 0 picks log(2)/(8 alpha)")
        ->capture_default_str();
    c_sim->add_option("--n-grid", sim.n_grid, "number of grid steps (times 0..n)")
        ->capture_default_str();
    c_sim->add_option("--pop-cap", sim.pop_cap,
                      "stop recording a trajectory once it reaches this size; 0 = uncapped")
        ->capture_default_str();
    c_sim->add_option("--n-data", sim.n_data, "number of independent trajectories")
        ->capture_default_str();
    c_sim->add_option("--count-mode", sim.count_mode,
                      "count_mode header written to the dataset")
        ->check(CLI::IsMember({"absolute", "proportional"}))
        ->capture_default_str();
    c_sim->add_option("--units", sim.units, "time-unit label written to the dataset")
        ->capture_default_str();
    c_sim->add_option("--out", sim.out, "output dataset path")->required();
    c_sim->add_option("--threads", sim.threads, "worker threads; 0 = hardware concurrency")
        ->envname("BHFIT_THREADS")
        ->capture_default_str();

    SigmaTableArgs tab;
    auto* c_tab = app.add_subcommand(
        "sigma-table", "build and save the tabulated fluctuation-variance curve");
    c_tab->add_option("--mesh", tab.mesh, "shape-grid spacing (e.g. 0.1)")->required();
    c_tab->add_option("--alpha", tab.alpha, "growth-rate convention of the table")
        ->capture_default_str();
    c_tab->add_option("--seed", tab.budgets.seed, "RNG seed (same seed, same file)")
        ->capture_default_str();
    c_tab->add_option("--mc-per-node", tab.budgets.mc_per_node,
                      "descendant-count samples per age node")
        ->capture_default_str();
    c_tab->add_option("--mc-zeta", tab.budgets.mc_zeta, "lifetime draws per x node")
        ->capture_default_str();
    c_tab->add_option("--age-nodes", tab.budgets.age_nodes,
                      "Gauss-Legendre nodes for the age integral")
        ->capture_default_str();
    c_tab->add_option("--x-quad", tab.budgets.x_quadrature,
                      "Simpson intervals for the x integral")
        ->capture_default_str();
    c_tab->add_option("--out", tab.out, "output table path (JSON)")->required();
    c_tab->add_option("--threads", tab.threads, "worker threads; 0 = hardware concurrency")
        ->envname("BHFIT_THREADS")
        ->capture_default_str();
    c_tab->add_flag("--force", tab.force,
                    "save even if the working-range monotonicity gate fails");

    InferArgs inf;
    auto* c_inf = app.add_subcommand(
        "infer", "estimate lifetime shape/scale from a dataset; writes a report and "
                 "plot-ready tables");
    c_inf->add_option("--dataset", inf.dataset, "input dataset path")->required();
    c_inf->add_option("--grid-file", inf.grid_file,
                      "tabulated variance curve (required for Gaussian-regime estimates)");
    c_inf->add_option("--out", inf.out, "output prefix for .report.json and .tsv files")
        ->required();
    c_inf->add_option("--window-start-count", inf.opts.window_start_count,
                      "regression window starts where the mean count reaches this")
        ->capture_default_str();
    c_inf->add_option("--regime-threshold", inf.opts.regime_threshold,
                      "Gaussian when |2 lambda - alpha|/alpha is below this")
        ->capture_default_str();
    c_inf->add_flag("--normalized-target,!--unnormalized-target", inf.opts.normalized_target,
                    "use the sqrt(N)-normalized variance target (default; the unnormalized "
                    "variant is scale-biased and kept for comparison)");

    SelftestArgs st;
    auto* c_st = app.add_subcommand("selftest", "run the fast invariant suite");
    c_st->add_option("--grid-file", st.grid_file,
                     "also validate this tabulated variance curve");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;  // bad flags are input errors
    }

    try {
        if (c_sim->parsed()) return run_simulate(sim);
        if (c_tab->parsed()) return run_sigma_table(tab);
        if (c_inf->parsed()) return run_infer(inf);
        if (c_st->parsed()) return run_selftest(st);
    } catch (const bhp::input_error& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return 2;
    } catch (const bhp::numeric_error& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const bhp::io_error& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
