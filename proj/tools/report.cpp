#include "report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bhp/errors.hpp"

namespace bhfit {
namespace {

using nlohmann::ordered_json;

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

ordered_json window_json(const bhp::Window& w) {
    return ordered_json{{"first", w.first}, {"last", w.last}};
}

ordered_json curve_json(const bhp::FluctuationSeries& s) {
    ordered_json j;
    j["delta"] = s.delta;
    j["normalized"] = s.normalized;
    j["index"] = s.index;
    j["times"] = s.times;
    j["variances"] = s.variances;
    j["n_used"] = s.n_used;
    return j;
}

const char* regime_name(bhp::Regime r) {
    switch (r) {
        case bhp::Regime::Gaussian: return "gaussian";
        case bhp::Regime::Critical: return "critical";
        case bhp::Regime::Oscillating: return "oscillating";
    }
    return "unknown";
}

}  // namespace

ordered_json make_report(const ordered_json& config_echo, const bhp::Dataset& ds,
                         const bhp::PipelineReport& rep) {
    ordered_json j;
    j["schema"] = "bhfit-report/1";
    j["config"] = config_echo;

    j["dataset"] = ordered_json{
        {"n_trajectories", ds.n_data()},
        {"n_times", ds.n_times()},
        {"grid_step", ds.grid_step},
        {"t_start", ds.t_start},
        {"units", ds.units},
        {"count_mode", ds.count_mode == bhp::CountMode::Absolute ? "absolute" : "proportional"},
        {"provenance", ds.provenance},
    };

    j["growth"] = ordered_json{
        {"alpha_hat", rep.alpha.alpha_hat},
        {"mean_r2", rep.alpha.mean_r2},
        {"window", window_json(rep.alpha.window)},
        {"n_excluded", rep.alpha.n_excluded},
        {"per_trajectory_slopes", rep.alpha.per_trajectory_slopes},
    };

    j["lags"] = ordered_json{{"delta_half", rep.delta1}, {"delta_full", rep.delta2}};

    ordered_json fl;
    fl["lambda_hat"] = rep.lambda.lambda_hat;
    fl["r2"] = rep.lambda.r2;
    fl["fit_window"] = window_json(rep.lambda.window);  // indices into curve_half
    fl["curve_half"] = curve_json(rep.curve_half);
    fl["curve_full"] =
        rep.curve_full.times.empty() ? ordered_json(nullptr) : curve_json(rep.curve_full);
    j["fluctuation"] = fl;

    j["regime"] = ordered_json{
        {"decision", regime_name(rep.regime.regime)},
        {"ratio", rep.regime.ratio},
        {"threshold", rep.regime.threshold},
    };

    std::vector<std::string> warnings;
    if (rep.alpha.n_excluded > 0)
        warnings.push_back(std::to_string(rep.alpha.n_excluded) +
                           " trajectories had fewer than two valid points in the window and "
                           "were excluded from the growth fit");
    if (!rep.curve_full.times.empty() && !rep.curve_full.normalized)
        warnings.push_back(
            "variance target is unnormalized (scale-biased); kept for comparison only");

    if (rep.estimate) {
        const auto& e = *rep.estimate;
        j["estimate"] = ordered_json{
            {"k_hat", e.k_hat},
            {"theta_hat", e.theta_hat},
            {"mu_hat", e.mu_hat},
            {"cv_hat", e.cv_hat},
            {"regime_used", regime_name(e.regime_used)},
            {"argmin_residual", e.argmin_residual},
            {"target", e.target},
            {"notes", e.notes},
        };
        for (const auto& n : e.notes) warnings.push_back(n);
    } else {
        j["estimate"] = nullptr;
    }

    j["limitation"] = rep.limitation;
    j["warnings"] = warnings;
    return j;
}

std::string logcounts_tsv(const bhp::Dataset& ds) {
    std::ostringstream out;
    out << "time";
    for (std::size_t jt = 0; jt < ds.n_data(); ++jt) out << "\tlog_count_" << jt;
    out << '\n';
    for (std::size_t i = 0; i < ds.n_times(); ++i) {
        out << fmt(ds.time_at(i));
        for (std::size_t jt = 0; jt < ds.n_data(); ++jt) {
            if (ds.valid[jt][i])
                out << '\t' << fmt(std::log(ds.counts[jt][i]));
            else
                out << "\tNA";
        }
        out << '\n';
    }
    return out.str();
}

std::string residuals_tsv(const bhp::Dataset& ds, double alpha_hat, double delta) {
    const auto lag = static_cast<std::size_t>(std::llround(delta / ds.grid_step));
    const double growth = std::exp(alpha_hat * delta);
    std::ostringstream out;
    out << "time";
    for (std::size_t jt = 0; jt < ds.n_data(); ++jt) out << "\tresidual_" << jt;
    out << '\n';
    for (std::size_t i = 0; i + lag < ds.n_times(); ++i) {
        out << fmt(ds.time_at(i));
        for (std::size_t jt = 0; jt < ds.n_data(); ++jt) {
            if (ds.valid[jt][i] && ds.valid[jt][i + lag])
                out << '\t' << fmt(ds.counts[jt][i + lag] - growth * ds.counts[jt][i]);
            else
                out << "\tNA";
        }
        out << '\n';
    }
    return out.str();
}

std::string variance_tsv(const bhp::FluctuationSeries& series, const bhp::LambdaEstimate& fit) {
    // Recover the fitted line's intercept: the least-squares line through
    // (t, log(variance)/2) over the fit window passes through the means.
    double mean_t = 0.0, mean_y = 0.0;
    std::size_t n_fit = 0;
    for (std::size_t i = fit.window.first; i <= fit.window.last && i < series.times.size();
         ++i) {
        mean_t += series.times[i];
        mean_y += 0.5 * std::log(series.variances[i]);
        ++n_fit;
    }
    const double intercept =
        n_fit > 0 ? mean_y / static_cast<double>(n_fit) -
                        fit.lambda_hat * mean_t / static_cast<double>(n_fit)
                  : 0.0;

    std::ostringstream out;
    out << "time\tvariance\tn_used\tin_fit\tfitted\n";
    for (std::size_t i = 0; i < series.times.size(); ++i) {
        const bool in_fit = n_fit > 0 && i >= fit.window.first && i <= fit.window.last;
        out << fmt(series.times[i]) << '\t' << fmt(series.variances[i]) << '\t'
            << series.n_used[i] << '\t' << (in_fit ? 1 : 0) << '\t'
            << fmt(std::exp(2.0 * (intercept + fit.lambda_hat * series.times[i]))) << '\n';
    }
    return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw bhp::io_error("cannot open for writing: " + path);
    out << content;
    out.flush();
    if (!out) throw bhp::io_error("write failed: " + path);
}

}  // namespace bhfit
