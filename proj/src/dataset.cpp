#include "bhp/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bhp/errors.hpp"
#include "bhp/simulate.hpp"

namespace bhp {

namespace {

constexpr const char* kMagic = "# bhds 1";

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& token, const std::string& what) {
    double v = 0.0;
    const char* first = token.data();
    const char* last = token.data() + token.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw io_error("dataset: cannot parse " + what + " '" + token + "'");
    return v;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string sanitize_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

}  // namespace

void Dataset::validate() const {
    if (!(grid_step > 0.0) || !std::isfinite(grid_step))
        throw input_error("dataset: grid_step must be positive and finite");
    if (!std::isfinite(t_start)) throw input_error("dataset: t_start must be finite");
    if (counts.empty()) throw input_error("dataset: no trajectories");
    if (counts.size() != valid.size())
        throw input_error("dataset: counts and valid mask differ in trajectory count");
    const std::size_t cols = counts.front().size();
    if (cols == 0) throw input_error("dataset: trajectories have no time points");
    for (std::size_t j = 0; j < counts.size(); ++j) {
        if (counts[j].size() != cols || valid[j].size() != cols)
            throw input_error("dataset: ragged rows (trajectory " + std::to_string(j) + ")");
        for (std::size_t i = 0; i < cols; ++i) {
            if (!valid[j][i]) continue;
            const double c = counts[j][i];
            if (!std::isfinite(c) || c <= 0.0)
                throw input_error("dataset: nonpositive count at trajectory " +
                                  std::to_string(j) + ", index " + std::to_string(i));
            if (count_mode == CountMode::Absolute && std::abs(c - std::round(c)) > 1e-9)
                throw input_error("dataset: non-integral absolute count at trajectory " +
                                  std::to_string(j) + ", index " + std::to_string(i));
        }
    }
}

Dataset read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open dataset file: " + path);

    std::string line;
    if (!std::getline(in, line) || trim(line) != kMagic)
        throw io_error("dataset: missing '" + std::string(kMagic) + "' header in " + path);

    Dataset ds;
    bool have_step = false, have_mode = false;
    std::streampos data_begin = in.tellg();
    while (std::getline(in, line)) {
        if (trim(line).empty()) {
            data_begin = in.tellg();
            continue;
        }
        if (line[0] != '#') break;
        std::string body = trim(line.substr(1));
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw io_error("dataset: malformed header line '" + line + "'");
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (key == "grid_step") {
            ds.grid_step = parse_double(value, "grid_step");
            have_step = true;
        } else if (key == "t_start") {
            ds.t_start = parse_double(value, "t_start");
        } else if (key == "units") {
            ds.units = value;
        } else if (key == "count_mode") {
            if (value == "absolute")
                ds.count_mode = CountMode::Absolute;
            else if (value == "proportional")
                ds.count_mode = CountMode::Proportional;
            else
                throw io_error("dataset: unknown count_mode '" + value + "'");
            have_mode = true;
        } else if (key == "provenance") {
            ds.provenance = value;
        } else {
            throw io_error("dataset: unknown header key '" + key + "'");
        }
        data_begin = in.tellg();
    }
    if (!have_step) throw io_error("dataset: header lacks grid_step");
    if (!have_mode) throw io_error("dataset: header lacks count_mode");

    in.clear();
    in.seekg(data_begin);
    std::size_t cols = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        std::istringstream row(line);
        std::vector<double> values;
        std::vector<std::uint8_t> mask;
        std::string token;
        while (row >> token) {
            if (token == "NA") {
                values.push_back(0.0);
                mask.push_back(0);
            } else {
                values.push_back(parse_double(token, "count"));
                mask.push_back(1);
            }
        }
        if (cols == 0) cols = values.size();
        if (values.size() != cols)
            throw io_error("dataset: ragged row " + std::to_string(ds.counts.size()) + " in " +
                           path);
        ds.counts.push_back(std::move(values));
        ds.valid.push_back(std::move(mask));
    }
    if (ds.counts.empty()) throw io_error("dataset: no data rows in " + path);
    ds.validate();
    return ds;
}

void write_dataset(const Dataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open dataset file for writing: " + path);
    out << kMagic << '\n';
    out << "# grid_step = " << format_double(ds.grid_step) << '\n';
    out << "# t_start = " << format_double(ds.t_start) << '\n';
    out << "# units = " << sanitize_line(ds.units) << '\n';
    out << "# count_mode = "
        << (ds.count_mode == CountMode::Absolute ? "absolute" : "proportional") << '\n';
    if (!ds.provenance.empty()) out << "# provenance = " << sanitize_line(ds.provenance) << '\n';
    for (std::size_t j = 0; j < ds.n_data(); ++j) {
        for (std::size_t i = 0; i < ds.counts[j].size(); ++i) {
            if (i) out << ' ';
            if (ds.valid[j][i])
                out << format_double(ds.counts[j][i]);
            else
                out << "NA";
        }
        out << '\n';
    }
    out.flush();
    if (!out) throw io_error("failed writing dataset file: " + path);
}

Dataset dataset_from_ensemble(const Ensemble& ens, const std::string& units,
                              std::string provenance) {
    Dataset ds;
    ds.grid_step = ens.config.grid_step;
    ds.t_start = 0.0;
    ds.units = units;
    ds.count_mode = CountMode::Absolute;
    ds.provenance = std::move(provenance);
    ds.counts.reserve(ens.trajectories.size());
    ds.valid.reserve(ens.trajectories.size());
    for (const auto& tr : ens.trajectories) {
        std::vector<double> row(tr.counts.size());
        std::vector<std::uint8_t> mask(tr.counts.size());
        const std::size_t cut = tr.valid_count();
        for (std::size_t i = 0; i < tr.counts.size(); ++i) {
            row[i] = static_cast<double>(tr.counts[i]);
            mask[i] = i < cut ? 1 : 0;
        }
        ds.counts.push_back(std::move(row));
        ds.valid.push_back(std::move(mask));
    }
    ds.validate();
    return ds;
}

}  // namespace bhp
