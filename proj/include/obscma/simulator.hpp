#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "obscma/analysis.hpp"
#include "obscma/channel.hpp"
#include "obscma/codebook.hpp"
#include "obscma/common.hpp"
#include "obscma/detectors.hpp"
#include "obscma/grid.hpp"
#include "obscma/otfs_modem.hpp"
#include "obscma/parallel.hpp"

namespace obscma {

enum class Scheme { CoMP, CoLocated, Cellular };

inline Scheme parse_scheme(std::string name) {
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    if (name == "comp") return Scheme::CoMP;
    if (name == "colocated" || name == "scheme1") return Scheme::CoLocated;
    if (name == "cellular" || name == "scheme2") return Scheme::Cellular;
    throw InvalidInput("unknown scheme '" + name + "'");
}

inline const char* to_string(Scheme s) {
    switch (s) {
        case Scheme::CoMP: return "comp";
        case Scheme::CoLocated: return "colocated";
        case Scheme::Cellular: return "cellular";
    }
    return "?";
}

struct BoundConfig {
    std::size_t n_ch = 100;
    GainConvention convention = GainConvention::PerBranch;
    std::size_t pathloss_samples = 100000;
};

struct SimulationConfig {
    OtfsGrid grid{64, 16, 15e3, 16};
    double carrier_hz = 4e9;
    std::filesystem::path codebook_path;
    AllocationAxis axis = AllocationAxis::Delay;
    Scheme scheme = Scheme::CoMP;
    HighwayGeometry highway;
    double site_spacing = 2000.0;             // co-located sites of Scheme I
    std::optional<Point> user_position;       // fixes every user at one point
    ChannelProfile profile;
    double velocity_kmh = 300.0;
    std::vector<double> power_dbm{0.0, 5.0, 10.0, 15.0, 20.0};
    double noise_psd_dbm_hz = -174.0;
    DetectorConfig detector;
    double csi_epsilon = 0.0;
    std::size_t trials = 1000;
    std::uint64_t seed = 1;
    std::size_t threads = 0;
    BoundConfig bound;

    void validate() const {
        grid.validate();
        highway.validate();
        profile.validate();
        detector.validate();
        require(carrier_hz > 0.0, "carrier frequency must be positive");
        require(site_spacing > 0.0, "site spacing must be positive");
        require(velocity_kmh >= 0.0, "velocity must be non-negative");
        require(!power_dbm.empty(), "power sweep is empty");
        require(csi_epsilon >= 0.0, "CSI error radius must be non-negative");
        require(trials >= 1, "need at least one trial");
        require(bound.n_ch >= 1 && bound.pathloss_samples >= 1, "bound needs at least one draw");
        if (user_position) {
            UserGeometry g;
            g.position = *user_position;
            g.validate(highway);
        }
    }

    PositionRegion user_region() const {
        if (user_position) return {user_position->x, user_position->x, user_position->y, user_position->y};
        return {0.0, highway.d_h, highway.d_p, highway.d_p + highway.d_w};
    }
};

namespace detail {

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace detail

// Relative codebook paths resolve against base_dir (the config's directory).
inline SimulationConfig config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
    SimulationConfig c;
    try {
        if (doc.contains("grid")) {
            const auto& g = doc.at("grid");
            detail::read_if(g, "M", c.grid.M);
            detail::read_if(g, "N", c.grid.N);
            detail::read_if(g, "delta_f", c.grid.delta_f);
            detail::read_if(g, "cp_len", c.grid.cp_len);
        }
        detail::read_if(doc, "carrier_hz", c.carrier_hz);
        require(doc.contains("codebook"), "config needs a codebook path");
        std::filesystem::path cb = doc.at("codebook").get<std::string>();
        c.codebook_path = cb.is_absolute() || base_dir.empty() ? cb : base_dir / cb;
        if (doc.contains("allocation_axis")) c.axis = parse_allocation_axis(doc.at("allocation_axis").get<std::string>());
        if (doc.contains("scheme")) c.scheme = parse_scheme(doc.at("scheme").get<std::string>());
        if (doc.contains("geometry")) {
            const auto& g = doc.at("geometry");
            detail::read_if(g, "d_h", c.highway.d_h);
            detail::read_if(g, "d_p", c.highway.d_p);
            detail::read_if(g, "d_w", c.highway.d_w);
            c.site_spacing = 2.0 * c.highway.d_h;
            detail::read_if(g, "site_spacing", c.site_spacing);
            if (g.contains("user_position") && !g.at("user_position").is_null()) {
                const auto& p = g.at("user_position");
                require(p.is_array() && p.size() == 2, "user_position is [x, y]");
                c.user_position = Point{p[0].get<double>(), p[1].get<double>()};
            }
        }
        const OtfsGrid grid = c.grid;
        c.profile.delays.clear();
        c.profile.mode = ProfileMode::Exponential;
        c.profile.powers_db = {0.0, -2.0, -4.0, -6.0};
        if (doc.contains("channel")) {
            const auto& ch = doc.at("channel");
            detail::read_if(ch, "L", c.profile.L);
            detail::read_if(ch, "delays", c.profile.delays);
            if (ch.contains("delays_ts")) {
                c.profile.delays.clear();
                for (double d : ch.at("delays_ts").get<std::vector<double>>()) c.profile.delays.push_back(d * grid.Ts());
            }
            detail::read_if(ch, "powers_db", c.profile.powers_db);
            detail::read_if(ch, "rolloff", c.profile.rolloff);
            detail::read_if(ch, "pulse_span", c.profile.pulse_span);
            detail::read_if(ch, "pulse_threshold", c.profile.pulse_threshold);
            detail::read_if(ch, "timing_offset_max", c.profile.timing_offset_max);
            if (ch.contains("profile_mode")) c.profile.mode = parse_profile_mode(ch.at("profile_mode").get<std::string>());
        }
        if (c.profile.delays.empty()) {
            for (std::size_t i = 0; i < c.profile.L; ++i) c.profile.delays.push_back(2.0 * static_cast<double>(i) * grid.Ts());
        }
        detail::read_if(doc, "velocity_kmh", c.velocity_kmh);
        detail::read_if(doc, "power_dbm", c.power_dbm);
        detail::read_if(doc, "noise_psd_dbm_hz", c.noise_psd_dbm_hz);
        if (doc.contains("detector")) {
            const auto& d = doc.at("detector");
            if (d.contains("algorithm")) c.detector.algorithm = parse_detector_kind(d.at("algorithm").get<std::string>());
            detail::read_if(d, "damping", c.detector.damping);
            detail::read_if(d, "min_variance", c.detector.min_variance);
            detail::read_if(d, "confidence", c.detector.confidence);
            detail::read_if(d, "n_c", c.detector.n_c);
            detail::read_if(d, "n_i", c.detector.n_i);
            detail::read_if(d, "n_o", c.detector.n_o);
            detail::read_if(d, "variance_cap_factor", c.detector.variance_cap_factor);
            if (d.contains("exchange")) c.detector.exchange = parse_exchange(d.at("exchange").get<std::string>());
            if (d.contains("warm_start")) c.detector.warm_start = d.at("warm_start").get<bool>();
        }
        detail::read_if(doc, "csi_epsilon", c.csi_epsilon);
        detail::read_if(doc, "trials", c.trials);
        detail::read_if(doc, "seed", c.seed);
        detail::read_if(doc, "threads", c.threads);
        if (doc.contains("bound")) {
            const auto& b = doc.at("bound");
            detail::read_if(b, "n_ch", c.bound.n_ch);
            detail::read_if(b, "pathloss_samples", c.bound.pathloss_samples);
            if (b.contains("gain_convention")) c.bound.convention = parse_gain_convention(b.at("gain_convention").get<std::string>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed config: ") + e.what());
    }
    c.validate();
    return c;
}

inline SimulationConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open config file " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(doc, path.parent_path());
}

// Noise power in watts over the given bandwidth.
inline double noise_variance(double psd_dbm_hz, double bandwidth_hz) {
    require(bandwidth_hz > 0.0, "bandwidth must be positive");
    return dbm_to_watts(psd_dbm_hz + 10.0 * std::log10(bandwidth_hz));
}

// Receive antennas and how they group into receivers.
struct Deployment {
    std::vector<Point> antennas;
    std::vector<std::vector<std::size_t>> receivers;  // antenna indices per receiver
    std::vector<std::size_t> serving;                 // receiver per user
};

// Antenna layout: CoMP and Scheme II use RRHs at (0,0) and (d_h,0). Scheme I
// puts two receive chains at the co-located site nearest to the users.
// Scheme II receivers see the other cell's users as interference.
inline Deployment deployment_for(const SimulationConfig& cfg, std::span<const Point> users) {
    Deployment d;
    switch (cfg.scheme) {
        case Scheme::CoMP:
            d.antennas = {{0.0, 0.0}, {cfg.highway.d_h, 0.0}};
            d.receivers = {{0, 1}};
            d.serving.assign(users.size(), 0);
            break;
        case Scheme::CoLocated: {
            double x_mean = 0.0;
            for (const auto& u : users) x_mean += u.x;
            x_mean /= static_cast<double>(std::max<std::size_t>(users.size(), 1));
            const double site = std::round(x_mean / cfg.site_spacing - 1e-12) * cfg.site_spacing;
            d.antennas = {{site, 0.0}, {site, 0.0}};
            d.receivers = {{0, 1}};
            d.serving.assign(users.size(), 0);
            break;
        }
        case Scheme::Cellular:
            d.antennas = {{0.0, 0.0}, {cfg.highway.d_h, 0.0}};
            d.receivers = {{0}, {1}};
            for (const auto& u : users) {
                d.serving.push_back(distance(u, d.antennas[0]) <= distance(u, d.antennas[1]) ? 0 : 1);
            }
            break;
    }
    return d;
}

template <std::uniform_random_bit_generator Rng>
std::vector<Point> sample_positions(const SimulationConfig& cfg, std::size_t count, Rng& rng) {
    const auto region = cfg.user_region();
    std::vector<Point> out;
    std::uniform_real_distribution<double> ux(region.x_min, region.x_max);
    std::uniform_real_distribution<double> uy(region.y_min, region.y_max);
    for (std::size_t i = 0; i < count; ++i) {
        if (cfg.user_position) {
            out.push_back(*cfg.user_position);
        } else {
            const double x = ux(rng);
            out.push_back({x, uy(rng)});
        }
    }
    return out;
}

// Geometry of one user against an antenna pair (channel generation looks up
// rrh_positions by index).
inline UserGeometry user_geometry(const Point& user, const Point& a, const Point& b, double velocity_kmh) {
    UserGeometry g;
    g.position = user;
    g.rrh_positions = {a, b};
    g.velocity_kmh = velocity_kmh;
    return g;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Stream `stream` of trial `trial`: counter-based, so trials can run in any order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t trial, std::uint64_t stream = 0) {
    return splitmix64(splitmix64(splitmix64(seed) ^ trial) ^ stream);
}

struct TrialResult {
    std::uint64_t bit_errors = 0;
    std::uint64_t bits = 0;
};

namespace detail {

inline std::size_t count_errors(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
    return n;
}

// Reduced system for a receiver that detects only the served users; the
// others' received frames are folded into the noise as white interference.
inline ReducedSystem cell_system(const CVector& y, std::span<const DelayDopplerMatrix> H, std::span<const CVector> frames,
                                 const std::vector<bool>& served, std::span<const std::size_t> active, double amp,
                                 double n0, const ScmaCodebook& codebook, const OtfsGrid& grid, AllocationAxis axis) {
    const auto n = static_cast<Eigen::Index>(grid.size());
    std::vector<DelayDopplerMatrix> own(codebook.num_users(), DelayDopplerMatrix(n, n));
    CVector interference = CVector::Zero(n);
    for (std::size_t u = 0; u < active.size(); ++u) {
        if (served[u]) {
            own[active[u]] = H[u];
        } else {
            interference += amp * (H[u] * frames[u]);
        }
    }
    const double n_eff = n0 + interference.squaredNorm() / static_cast<double>(grid.size());
    const std::vector<double> powers(codebook.num_users(), amp * amp);
    return reduce_system(y, own, powers, n_eff, codebook, grid, axis);
}

}  // namespace detail

// One Monte Carlo frame at one power point. In ML mode only user
// (trial mod J) transmits and is detected.
inline TrialResult run_trial(const SimulationConfig& cfg, const ScmaCodebook& codebook, double power_dbm,
                             std::uint64_t trial) {
    const OtfsGrid& grid = cfg.grid;
    const bool ml = cfg.detector.algorithm == DetectorKind::MaximumLikelihood;
    const std::size_t J = codebook.num_users();
    const std::size_t slots = codewords_per_frame(grid, codebook.num_resources());
    const std::size_t width = codebook.bits_per_codeword();

    std::mt19937_64 rng(derive_seed(cfg.seed, trial, 0));
    std::mt19937_64 csi_rng(derive_seed(cfg.seed, trial, 1));
    std::mt19937_64 noise_rng(derive_seed(cfg.seed, trial, 2));

    std::vector<std::size_t> active;
    if (ml) {
        active.push_back(static_cast<std::size_t>(trial % J));
    } else {
        for (std::size_t j = 0; j < J; ++j) active.push_back(j);
    }
    const auto positions = sample_positions(cfg, active.size(), rng);
    const auto dep = deployment_for(cfg, positions);
    const std::size_t A = dep.antennas.size();
    const double power = dbm_to_watts(power_dbm);
    const double amp = std::sqrt(power);
    const double n0 = noise_variance(cfg.noise_psd_dbm_hz, grid.bandwidth());

    // Channels [antenna][active user].
    std::vector<std::vector<MultipathChannel>> truth(A);
    for (std::size_t a = 0; a < A; ++a) {
        for (std::size_t u = 0; u < active.size(); ++u) {
            const auto geo = user_geometry(positions[u], dep.antennas[a], dep.antennas[a], cfg.velocity_kmh);
            truth[a].push_back(generate_channel(geo, 0, cfg.profile, grid, cfg.carrier_hz, rng));
        }
    }

    std::bernoulli_distribution coin(0.5);
    std::vector<std::vector<std::uint8_t>> bits(active.size());
    std::vector<TimeDomainSignal> tx;
    std::vector<CVector> frames;
    for (std::size_t u = 0; u < active.size(); ++u) {
        bits[u].resize(slots * width);
        for (auto& b : bits[u]) b = coin(rng) ? 1 : 0;
        const auto idx = map_bits(bits[u], codebook, active[u]);
        const CMatrix X = allocate(idx, codebook, grid, cfg.axis, active[u]);
        frames.push_back(Eigen::Map<const CVector>(X.data(), X.size()));
        auto s = modulate(X, grid);
        s.samples *= amp;
        tx.push_back(std::move(s));
    }

    std::vector<CVector> y(A);
    for (std::size_t a = 0; a < A; ++a) {
        TimeDomainSignal r;
        r.cp_len = grid.cp_len;
        r.samples = CVector::Zero(static_cast<Eigen::Index>(grid.size() + grid.cp_len));
        for (std::size_t u = 0; u < active.size(); ++u) r.samples += apply_time_domain(tx[u], truth[a][u], grid).samples;
        for (Eigen::Index i = 0; i < r.samples.size(); ++i) r.samples[i] += complex_gaussian(n0, noise_rng);
        const CMatrix Y = demodulate(r, grid);
        y[a] = Eigen::Map<const CVector>(Y.data(), Y.size());
    }

    std::vector<std::vector<DelayDopplerMatrix>> H(A);
    for (std::size_t a = 0; a < A; ++a) {
        for (std::size_t u = 0; u < active.size(); ++u) {
            H[a].push_back(build_dd_matrix(perturb_csi(truth[a][u], cfg.csi_epsilon, grid, csi_rng), grid));
        }
    }

    TrialResult result;
    if (ml) {
        const std::size_t rx = dep.serving[0];
        std::vector<CVector> ys;
        std::vector<DelayDopplerMatrix> hs;
        for (auto a : dep.receivers[rx]) {
            ys.push_back(y[a]);
            hs.push_back(H[a][0]);
        }
        const auto decision = ml_detect_single_user(ys, hs, amp, codebook, active[0], grid, cfg.axis);
        const auto decoded = demap(decision.indices, codebook.size());
        result.bit_errors = detail::count_errors(decoded, bits[0]);
        result.bits = bits[0].size();
        return result;
    }

    const std::vector<double> powers(J, power);
    for (std::size_t rx = 0; rx < dep.receivers.size(); ++rx) {
        bool serves_any = false;
        for (auto s : dep.serving) serves_any = serves_any || s == rx;
        if (!serves_any) continue;

        // A cell receiver detects its own users only; the rest is measured
        // interference folded into the noise.
        const bool own_only = cfg.scheme == Scheme::Cellular;
        std::vector<ReducedSystem> systems;
        for (auto a : dep.receivers[rx]) {
            if (!own_only) {
                systems.push_back(reduce_system(y[a], H[a], powers, n0, codebook, grid, cfg.axis));
                continue;
            }
            std::vector<bool> served(active.size());
            for (std::size_t u = 0; u < active.size(); ++u) served[u] = dep.serving[u] == rx;
            systems.push_back(detail::cell_system(y[a], H[a], frames, served, active, amp, n0, codebook, grid, cfg.axis));
        }
        DetectorResult det;
        if (cfg.detector.algorithm == DetectorKind::Decentralized && systems.size() == 2) {
            det = std::move(gaep_decentralized(systems, codebook, cfg.detector).per_rrh[0]);
        } else {
            det = gaep_centralized(systems.size() == 1 ? systems.front() : stack_systems(systems), codebook, cfg.detector);
        }
        for (std::size_t u = 0; u < active.size(); ++u) {
            if (dep.serving[u] != rx) continue;
            result.bit_errors += detail::count_errors(det.bits[active[u]], bits[u]);
            result.bits += bits[u].size();
        }
    }
    return result;
}

struct AberRow {
    std::string scheme;
    double power_dbm = 0.0;
    std::string series;
    double aber = 0.0;
    std::uint64_t bit_errors = 0;
    std::uint64_t bits_total = 0;
    std::uint64_t trials = 0;
    std::uint64_t seed = 0;
};

struct AberReport {
    std::vector<AberRow> rows;
};

// Every power point reuses the same per-trial seeds.
inline AberReport run_sweep(const SimulationConfig& cfg, const ScmaCodebook& codebook) {
    cfg.validate();
    check_allocation(cfg.grid, codebook.num_resources(), cfg.axis);
    AberReport report;
    for (double p : cfg.power_dbm) {
        std::vector<TrialResult> results(cfg.trials);
        parallel_for(cfg.trials, cfg.threads, [&](std::size_t t) {
            try {
                results[t] = run_trial(cfg, codebook, p, t);
            } catch (const std::exception& e) {
                throw std::runtime_error("trial " + std::to_string(t) + " at " + std::to_string(p) +
                                         " dBm failed: " + e.what());
            }
        });
        AberRow row;
        row.scheme = to_string(cfg.scheme);
        row.power_dbm = p;
        row.series = to_string(cfg.detector.algorithm);
        for (const auto& r : results) {
            row.bit_errors += r.bit_errors;
            row.bits_total += r.bits;
        }
        row.aber = static_cast<double>(row.bit_errors) / static_cast<double>(row.bits_total);
        row.trials = cfg.trials;
        row.seed = cfg.seed;
        report.rows.push_back(row);
    }
    return report;
}

inline AberReport run_sweep(const SimulationConfig& cfg) { return run_sweep(cfg, load_codebook(cfg.codebook_path)); }

// Single-user union bound over the configured sweep. Branch statistics follow
// the scheme's antenna layout for the configured user region.
inline AberReport bound_sweep(const SimulationConfig& cfg, const ScmaCodebook& codebook) {
    cfg.validate();
    std::mt19937_64 rng(derive_seed(cfg.seed, 0, 3));
    const auto region = cfg.user_region();
    const Point centre{(region.x_min + region.x_max) / 2.0, (region.y_min + region.y_max) / 2.0};
    const std::vector<Point> probe{centre};
    auto dep = deployment_for(cfg, probe);
    const auto& antennas = dep.receivers[dep.serving[0]];

    BoundSetup setup;
    setup.v_max = max_doppler_hz(cfg.velocity_kmh, cfg.carrier_hz);
    setup.profile = cfg.profile;
    setup.n_ch = cfg.bound.n_ch;
    setup.convention = cfg.bound.convention;
    setup.seed = derive_seed(cfg.seed, 0, 4);
    setup.threads = cfg.threads;
    for (auto a : antennas) {
        const Point site = dep.antennas[a];
        setup.mean_pathloss.push_back(mean_pathloss(region, site, cfg.bound.pathloss_samples, rng));
        setup.toward.push_back(site.x > centre.x);
    }

    const double n0 = noise_variance(cfg.noise_psd_dbm_hz, cfg.grid.bandwidth());
    std::vector<double> rho;
    for (double p : cfg.power_dbm) rho.push_back(dbm_to_watts(p) / n0);
    const auto bound = aber_union_bound(codebook, cfg.grid, cfg.axis, setup, rho);

    AberReport report;
    for (std::size_t i = 0; i < rho.size(); ++i) {
        AberRow row;
        row.scheme = to_string(cfg.scheme);
        row.power_dbm = cfg.power_dbm[i];
        row.series = "bound";
        row.aber = bound.aber[i];
        row.trials = cfg.bound.n_ch;
        row.seed = cfg.seed;
        report.rows.push_back(row);
    }
    return report;
}

inline void write_csv(std::ostream& out, const AberReport& report) {
    out << "scheme,power_dbm,series,aber,bit_errors,bits_total,trials,seed\n";
    char buf[64];
    for (const auto& r : report.rows) {
        out << r.scheme << ',';
        std::snprintf(buf, sizeof buf, "%.6g", r.power_dbm);
        out << buf << ',' << r.series << ',';
        std::snprintf(buf, sizeof buf, "%.10e", r.aber);
        out << buf << ',' << r.bit_errors << ',' << r.bits_total << ',' << r.trials << ',' << r.seed << '\n';
    }
}

inline void write_csv(const std::filesystem::path& path, const AberReport& report) {
    std::ofstream out(path);
    require(out.good(), "cannot write " + path.string());
    write_csv(out, report);
}

}  // namespace obscma
