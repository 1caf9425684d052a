#include "bhp/sigma_grid.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <fstream>
#include <sstream>
#include <thread>

#include "bhp/quadrature.hpp"
#include "bhp/rng.hpp"
#include "bhp/simulate.hpp"
#include "json.hpp"

namespace bhp {

namespace {

constexpr double kLn2 = 0.6931471805599453;
constexpr int kBatches = 16;  // batching gives the variance-of-variance SE

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Standard error of the mean of independent batch estimates.
double batch_se(const std::vector<double>& v, double center) {
    double s = 0.0;
    for (double x : v) s += (x - center) * (x - center);
    const double b = static_cast<double>(v.size());
    return std::sqrt(s / (b * (b - 1.0)));
}

// Smallest a_max whose stationary-age tail mass is below 1e-8.
double age_integral_cutoff(const GammaLifetime& law) {
    const double alpha = malthusian_alpha(law);
    double a_max =
        law.mean() + 10.0 * law.scale * std::sqrt(law.shape) + 10.0 / alpha;
    for (int it = 0; it < 60; ++it) {
        const double mass = integrate(
            [&](double a) { return stationary_age_density(law, a); }, 0.0, a_max, 1e-10,
            1e-14);
        if (1.0 - mass < 1e-8) return a_max;
        a_max *= 1.3;
    }
    throw numeric_error("sigma_x: could not truncate the age integral");
}

// Dense linear-interpolation table of h_delta on [0, span]; empty only for
// integer shape < 2 (the exponential case) where h is identically zero. For
// non-integer shapes below 2 there are no sub-dominant modes but the
// branch-cut remainder still makes h nonzero.
class HTable {
  public:
    HTable(const GammaLifetime& law, double delta, double span) {
        const bool integer_shape =
            std::abs(law.shape - std::round(law.shape)) <= 1e-9;
        if (law.shape < 2.0 && integer_shape) return;
        double step = span / 2048.0;
        if (law.shape >= 2.0) {
            const double tau = std::abs(second_eigenvalue(law).imag());
            if (tau > 1e-9) step = std::min(step, 2.0 * M_PI / tau / 64.0);
        }
        const std::size_t n = static_cast<std::size_t>(std::ceil(span / step)) + 2;
        if (n > (1u << 21)) throw numeric_error("sigma_y: h table would be degenerate");
        step_ = step;
        values_.resize(n);
        for (std::size_t j = 0; j < n; ++j)
            values_[j] = h_delta(law, static_cast<double>(j) * step, delta);
    }

    double operator()(double y) const {
        if (values_.empty()) return 0.0;
        const double pos = y / step_;
        std::size_t j = static_cast<std::size_t>(pos);
        if (j + 2 > values_.size()) j = values_.size() - 2;
        const double t = pos - static_cast<double>(j);
        return (1.0 - t) * values_[j] + t * values_[j + 1];
    }

  private:
    double step_ = 1.0;
    std::vector<double> values_;
};

}  // namespace

double cond_mean_age(const GammaLifetime& law, double age, double delta) {
    if (!(age >= 0.0)) throw input_error("cond_mean_age: age must be >= 0");
    if (!(delta > 0.0)) throw input_error("cond_mean_age: delta must be > 0");
    const double tail = survival(law, age);
    if (tail <= 0.0) throw numeric_error("cond_mean_age: survival underflows at this age");
    const double integral = integrate(
        [&](double x) { return mean_approx(law, delta - x) * density(law, age + x); }, 0.0,
        delta, 1e-6, 1e-14);
    return 2.0 * integral / tail + survival(law, age + delta) / tail;
}

McValue sigma_x(const GammaLifetime& law, double delta, const SigmaBudgets& budgets) {
    if (!(delta > 0.0)) throw input_error("sigma_x: delta must be > 0");
    if (budgets.age_nodes < 2) throw input_error("sigma_x: need at least two age nodes");
    if (budgets.mc_per_node < 2 * kBatches)
        throw input_error("sigma_x: mc_per_node too small to batch");

    const double a_max = age_integral_cutoff(law);
    const auto gl = gauss_legendre(static_cast<int>(budgets.age_nodes));
    const std::size_t batch_n = budgets.mc_per_node / kBatches;

    double value = 0.0, se_sq = 0.0;
    for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
        const double a = 0.5 * (gl.nodes[i] + 1.0) * a_max;
        const double weight = 0.5 * a_max * gl.weights[i] * stationary_age_density(law, a);
        if (weight == 0.0) continue;  // beyond the lifetime support
        Rng rng(budgets.seed, i);
        std::vector<double> batch_vars(kBatches);
        for (int b = 0; b < kBatches; ++b)
            batch_vars[b] = moments_from_age(law, a, delta, batch_n, rng).second;
        const double var_hat = mean_of(batch_vars);
        const double se_i = batch_se(batch_vars, var_hat);
        value += weight * var_hat;
        se_sq += weight * weight * se_i * se_i;
    }
    return {value, std::sqrt(se_sq)};
}

McValue sigma_y(const GammaLifetime& law, double delta, const SigmaBudgets& budgets) {
    if (!(delta > 0.0)) throw input_error("sigma_y: delta must be > 0");
    if (budgets.x_quadrature < 8) throw input_error("sigma_y: x_quadrature too small");
    if (budgets.mc_zeta < 2 * kBatches) throw input_error("sigma_y: mc_zeta too small");
    // Exponential lifetimes are memoryless: E_x[N_delta] = e^{alpha delta}
    // for every x and h vanishes, so the integrand is identically zero.
    if (law.shape == 1.0) return {0.0, 0.0};

    const double alpha = malthusian_alpha(law);
    const double growth = std::exp(alpha * delta);
    const double x_max = std::log(1e8) / alpha;  // e^{-alpha x_max} < 1e-8
    std::size_t n = budgets.x_quadrature;
    if (n % 2 == 1) ++n;
    const double hx = x_max / static_cast<double>(n);
    const HTable h_tab(law, delta, x_max);
    const std::size_t batch_n = budgets.mc_zeta / kBatches;

    double value = 0.0, se_sq = 0.0;
    for (std::size_t j = 0; j <= n; ++j) {
        const double x = static_cast<double>(j) * hx;
        const double tail = survival(law, x);
        // The pre-division branch carries weight P(zeta > x); where that
        // has underflowed the conditional mean is both unneeded and
        // uncomputable, so its level is irrelevant.
        const double level = tail > 1e-12 ? cond_mean_age(law, x, delta) - growth : 0.0;

        Rng rng(budgets.seed, (1ull << 32) + j);
        std::vector<double> batch_vars(kBatches);
        for (int b = 0; b < kBatches; ++b) {
            double s = 0.0, s2 = 0.0;
            for (std::size_t m = 0; m < batch_n; ++m) {
                const double zeta = rng.gamma(law.shape, law.scale);
                const double phi = zeta > x ? level : 2.0 * h_tab(x - zeta);
                s += phi;
                s2 += phi * phi;
            }
            const double nb = static_cast<double>(batch_n);
            const double mean = s / nb;
            batch_vars[b] = std::max(0.0, (s2 - nb * mean * mean) / (nb - 1.0));
        }
        const double var_hat = mean_of(batch_vars);
        const double se_j = batch_se(batch_vars, var_hat);

        const double simpson = (j == 0 || j == n) ? 1.0 : (j % 2 == 1 ? 4.0 : 2.0);
        const double weight = hx / 3.0 * simpson * std::exp(-alpha * x);
        value += weight * var_hat;
        se_sq += weight * weight * se_j * se_j;
    }
    return {value, std::sqrt(se_sq)};
}

McValue sigma_total(const GammaLifetime& law, double delta, const SigmaBudgets& budgets) {
    const McValue x = sigma_x(law, delta, budgets);
    const McValue y = sigma_y(law, delta, budgets);
    const double alpha = malthusian_alpha(law);
    return {x.value + 2.0 * alpha * y.value,
            std::sqrt(x.std_error * x.std_error +
                      4.0 * alpha * alpha * y.std_error * y.std_error)};
}

double critical_sigma(const GammaLifetime& law, double delta) {
    if (!(delta > 0.0)) throw input_error("critical_sigma: delta must be > 0");
    if (std::abs(law.shape - critical_shape()) > 1e-6)
        throw input_error("critical_sigma: law is not at the critical shape");
    const double alpha = malthusian_alpha(law);
    const std::complex<double> rho = second_eigenvalue(law);
    const double mod2 = std::norm(std::exp(rho * delta) - std::exp(alpha * delta));
    const double two_k = std::pow(2.0, 2.0 / law.shape);
    const double one_k = std::pow(2.0, 1.0 / law.shape);
    return alpha / (law.shape * law.shape) * (two_k / (two_k - one_k)) * mod2;
}

void SigmaGrid::validate() const {
    const std::size_t n = k_values.size();
    if (n < 2) throw input_error("sigma grid: need at least two nodes");
    if (!(mesh > 0.0)) throw input_error("sigma grid: mesh must be > 0");
    if (!(alpha_convention > 0.0)) throw input_error("sigma grid: alpha must be > 0");
    if (sigma2.size() != n || sigma2_x.size() != n || sigma2_y.size() != n ||
        se.size() != n || se_x.size() != n || se_y.size() != n)
        throw input_error("sigma grid: vector sizes disagree");
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0 && !(k_values[i] > k_values[i - 1]))
            throw input_error("sigma grid: k values must be strictly increasing");
        if (!(sigma2[i] > 0.0) || !std::isfinite(sigma2[i]) || !(sigma2_x[i] > 0.0) ||
            !(sigma2_y[i] >= 0.0) || !(se[i] >= 0.0))
            throw input_error("sigma grid: entries must be positive and finite");
        const double assembled = sigma2_x[i] + 2.0 * alpha_convention * sigma2_y[i];
        if (std::abs(sigma2[i] - assembled) > 1e-9 * std::max(1.0, sigma2[i]))
            throw input_error("sigma grid: total does not match its components");
    }
}

namespace {

double interp(const std::vector<double>& ks, const std::vector<double>& vs, double k) {
    if (!(k >= ks.front()) || !(k <= ks.back()))
        throw input_error("sigma grid lookup: shape outside the tabulated range");
    const auto it = std::lower_bound(ks.begin(), ks.end(), k);
    if (*it == k) return vs[static_cast<std::size_t>(it - ks.begin())];
    const std::size_t hi = static_cast<std::size_t>(it - ks.begin());
    const double t = (k - ks[hi - 1]) / (ks[hi] - ks[hi - 1]);
    return (1.0 - t) * vs[hi - 1] + t * vs[hi];
}

}  // namespace

double SigmaGrid::lookup(double k) const { return interp(k_values, sigma2, k); }
double SigmaGrid::lookup_se(double k) const { return interp(k_values, se, k); }

std::string SigmaGrid::working_range_violation() const {
    double worst_excess = 0.0;
    std::size_t worst_i = 0, worst_j = 0;
    for (std::size_t i = 0; i < k_values.size(); ++i) {
        if (k_values[i] > kSigmaWorkingRangeMax) break;
        for (std::size_t j = i + 1; j < k_values.size(); ++j) {
            if (k_values[j] > kSigmaWorkingRangeMax) break;
            const double band = std::max(3.0 * (se[i] + se[j]), 0.005 * sigma2[i]);
            const double excess = sigma2[j] - sigma2[i] - band;
            if (excess > worst_excess) {
                worst_excess = excess;
                worst_i = i;
                worst_j = j;
            }
        }
    }
    if (worst_excess <= 0.0) return {};
    std::ostringstream msg;
    msg << "sigma2 rises from " << sigma2[worst_i] << " at k=" << k_values[worst_i] << " to "
        << sigma2[worst_j] << " at k=" << k_values[worst_j]
        << ", beyond the noise band; the working range [" << k_values.front() << ", "
        << kSigmaWorkingRangeMax << "] is not monotone";
    return msg.str();
}

SigmaGrid build_grid(double mesh, const SigmaBudgets& budgets, double alpha,
                     unsigned n_threads,
                     const std::function<void(std::size_t, std::size_t)>& progress) {
    if (!(mesh > 0.0)) throw input_error("build_grid: mesh must be > 0");
    if (!(alpha > 0.0)) throw input_error("build_grid: alpha must be > 0");
    const double kc = critical_shape();
    const long n_nodes = static_cast<long>(std::floor((kc - 1.0) / mesh));
    if (n_nodes < 2) throw input_error("build_grid: mesh too coarse for the shape range");

    SigmaGrid grid;
    grid.mesh = mesh;
    grid.alpha_convention = alpha;
    grid.budgets = budgets;
    grid.k_values.resize(n_nodes);
    grid.sigma2.resize(n_nodes);
    grid.sigma2_x.resize(n_nodes);
    grid.sigma2_y.resize(n_nodes);
    grid.se.resize(n_nodes);
    grid.se_x.resize(n_nodes);
    grid.se_y.resize(n_nodes);

    const double delta = kLn2 / alpha;
    std::vector<std::string> failures(n_nodes);
    std::atomic<std::size_t> nodes_done{0};

    if (n_threads == 0) n_threads = std::max(1u, std::thread::hardware_concurrency());
    n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(n_nodes));

    auto worker = [&](unsigned tid) {
        for (long l = tid; l < n_nodes; l += n_threads) {
            const double k = 1.0 + mesh * static_cast<double>(l);
            try {
                SigmaBudgets node_budgets = budgets;
                node_budgets.seed =
                    SplitMix64{budgets.seed ^
                               (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(l + 1))}
                        .next();
                const GammaLifetime law(k, std::expm1(kLn2 / k) / alpha);
                const McValue x = sigma_x(law, delta, node_budgets);
                const McValue y = sigma_y(law, delta, node_budgets);
                grid.k_values[l] = k;
                grid.sigma2_x[l] = x.value;
                grid.sigma2_y[l] = y.value;
                grid.sigma2[l] = x.value + 2.0 * alpha * y.value;
                grid.se_x[l] = x.std_error;
                grid.se_y[l] = y.std_error;
                grid.se[l] = std::sqrt(x.std_error * x.std_error +
                                       4.0 * alpha * alpha * y.std_error * y.std_error);
            } catch (const std::exception& e) {
                failures[l] = "k=" + std::to_string(k) + ": " + e.what();
            }
            if (progress)
                progress(nodes_done.fetch_add(1) + 1, static_cast<std::size_t>(n_nodes));
        }
    };
    if (n_threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker, t);
        for (auto& th : pool) th.join();
    }

    std::string all_failures;
    for (const auto& f : failures)
        if (!f.empty()) all_failures += (all_failures.empty() ? "" : "; ") + f;
    if (!all_failures.empty())
        throw numeric_error("grid build rejected: " + all_failures);

    grid.max_rel_jump = 0.0;
    grid.strictly_decreasing = true;
    for (long l = 1; l < n_nodes; ++l) {
        const double jump = std::abs(grid.sigma2[l] - grid.sigma2[l - 1]) / grid.sigma2[l - 1];
        grid.max_rel_jump = std::max(grid.max_rel_jump, jump);
        if (!(grid.sigma2[l] < grid.sigma2[l - 1])) grid.strictly_decreasing = false;
    }
    return grid;
}

std::uint32_t crc32(const std::string& data) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int b = 0; b < 8; ++b) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (unsigned char ch : data) crc = table[(crc ^ ch) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

namespace {

nlohmann::json budgets_to_json(const SigmaBudgets& b) {
    return {{"mc_per_node", b.mc_per_node},
            {"mc_zeta", b.mc_zeta},
            {"age_nodes", b.age_nodes},
            {"x_quadrature", b.x_quadrature},
            {"seed", b.seed}};
}

SigmaBudgets budgets_from_json(const nlohmann::json& j) {
    SigmaBudgets b;
    b.mc_per_node = j.at("mc_per_node").get<std::size_t>();
    b.mc_zeta = j.at("mc_zeta").get<std::size_t>();
    b.age_nodes = j.at("age_nodes").get<std::size_t>();
    b.x_quadrature = j.at("x_quadrature").get<std::size_t>();
    b.seed = j.at("seed").get<std::uint64_t>();
    return b;
}

}  // namespace

void save_grid(const SigmaGrid& grid, const std::string& path, bool allow_non_injective) {
    grid.validate();
    if (!allow_non_injective) {
        const std::string violation = grid.working_range_violation();
        if (!violation.empty())
            throw numeric_error("sigma grid failed the monotonicity gate: " + violation +
                                "; it cannot be released for inference");
    }

    nlohmann::json payload{{"mesh", grid.mesh},
                           {"alpha_convention", grid.alpha_convention},
                           {"delta_convention", grid.delta_convention},
                           {"k_values", grid.k_values},
                           {"sigma2", grid.sigma2},
                           {"sigma2_x", grid.sigma2_x},
                           {"sigma2_y", grid.sigma2_y},
                           {"se", grid.se},
                           {"se_x", grid.se_x},
                           {"se_y", grid.se_y},
                           {"budgets", budgets_to_json(grid.budgets)},
                           {"max_rel_jump", grid.max_rel_jump},
                           {"strictly_decreasing", grid.strictly_decreasing}};
    nlohmann::json doc{{"format_version", SigmaGrid::kFormatVersion},
                       {"crc32", crc32(payload.dump())},
                       {"payload", payload}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open grid file for writing: " + path);
    out << doc.dump() << '\n';
    out.flush();
    if (!out) throw io_error("failed writing grid file: " + path);
}

SigmaGrid load_grid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open grid file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();

    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
        throw io_error("corrupt grid file (unparseable): " + std::string(e.what()));
    }
    try {
        const int version = doc.at("format_version").get<int>();
        if (version != SigmaGrid::kFormatVersion)
            throw io_error("unsupported grid format version " + std::to_string(version));
        const auto& payload = doc.at("payload");
        if (doc.at("crc32").get<std::uint32_t>() != crc32(payload.dump()))
            throw io_error("grid file checksum mismatch: " + path);

        SigmaGrid grid;
        grid.mesh = payload.at("mesh").get<double>();
        grid.alpha_convention = payload.at("alpha_convention").get<double>();
        grid.delta_convention = payload.at("delta_convention").get<std::string>();
        grid.k_values = payload.at("k_values").get<std::vector<double>>();
        grid.sigma2 = payload.at("sigma2").get<std::vector<double>>();
        grid.sigma2_x = payload.at("sigma2_x").get<std::vector<double>>();
        grid.sigma2_y = payload.at("sigma2_y").get<std::vector<double>>();
        grid.se = payload.at("se").get<std::vector<double>>();
        grid.se_x = payload.at("se_x").get<std::vector<double>>();
        grid.se_y = payload.at("se_y").get<std::vector<double>>();
        grid.budgets = budgets_from_json(payload.at("budgets"));
        grid.max_rel_jump = payload.at("max_rel_jump").get<double>();
        grid.strictly_decreasing = payload.at("strictly_decreasing").get<bool>();
        try {
            grid.validate();
        } catch (const input_error& e) {
            throw io_error("grid file violates invariants: " + std::string(e.what()));
        }
        return grid;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("corrupt grid file (bad fields): " + std::string(e.what()));
    }
}

}  // namespace bhp
