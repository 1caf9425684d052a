#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace bhp {

// How the recorded numbers relate to population size. Absolute counts are
// individuals (integral values); Proportional counts are known only up to an
// unknown positive scale (fluorescence-like), which rules out variance-based
// parameter estimation but leaves growth-rate and eigenvalue estimation
// intact.
enum class CountMode { Absolute, Proportional };

// A panel of population measurements on a shared uniform time grid:
// counts[j][i] is trajectory j at time t_start + i * grid_step. valid[j][i]
// is 0 where an entry is missing or excluded (e.g. beyond a recording cap)
// and 1 where it is usable; consumers must skip invalid entries.
struct Dataset {
    double grid_step = 0.0;
    double t_start = 0.0;
    std::string units = "arbitrary";
    CountMode count_mode = CountMode::Absolute;
    std::string provenance;  // free-form origin note, echoed on write
    std::vector<std::vector<double>> counts;
    std::vector<std::vector<std::uint8_t>> valid;

    std::size_t n_data() const { return counts.size(); }
    std::size_t n_times() const { return counts.empty() ? 0 : counts.front().size(); }
    double time_at(std::size_t i) const { return t_start + grid_step * static_cast<double>(i); }

    // Structural invariants: positive grid step, at least one trajectory,
    // rectangular matrices, valid mask matching counts, every valid entry
    // finite and positive, and integral within 1e-9 in Absolute mode.
    // Throws input_error.
    void validate() const;
};

// Plain-text dataset file: a versioned header of "# key = value" lines
// followed by one whitespace-separated row per trajectory, with "NA" marking
// masked entries. read_dataset validates the result; write_dataset emits
// full-precision values and round-trips exactly.
Dataset read_dataset(const std::string& path);
void write_dataset(const Dataset& ds, const std::string& path);

// Converts a simulated ensemble to an Absolute-mode dataset on the ensemble's
// recording grid; entries at or beyond a trajectory's truncation point are
// masked.
struct Ensemble;
Dataset dataset_from_ensemble(const Ensemble& ens, const std::string& units = "time",
                              std::string provenance = {});

}  // namespace bhp
