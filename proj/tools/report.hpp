#pragma once

#include <string>

#include "bhp/dataset.hpp"
#include "bhp/inference.hpp"
#include "json.hpp"

namespace bhfit {

// Machine-readable analysis report (schema "bhfit-report/1"): the
// configuration echo, every pipeline intermediate, the parameter estimate
// or the limitation that blocked it, and accumulated warnings. Field order
// is fixed, so identical runs serialize byte-for-byte identically.
nlohmann::ordered_json make_report(const nlohmann::ordered_json& config_echo,
                                   const bhp::Dataset& ds, const bhp::PipelineReport& rep);

// Plot-ready tab-separated exports (NA marks masked entries).
// Log of each trajectory's counts against time.
std::string logcounts_tsv(const bhp::Dataset& ds);
// Per-trajectory lag-delta residuals N(t+delta) - e^{alpha delta} N(t).
std::string residuals_tsv(const bhp::Dataset& ds, double alpha_hat, double delta);
// Variance-vs-time curve with the fitted exponential and fit-window flags.
std::string variance_tsv(const bhp::FluctuationSeries& series, const bhp::LambdaEstimate& fit);

// Writes content to path; throws io_error on any failure.
void write_text_file(const std::string& path, const std::string& content);

}  // namespace bhfit
