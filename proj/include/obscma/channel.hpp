#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Sparse>

#include "obscma/common.hpp"
#include "obscma/grid.hpp"
#include "obscma/otfs_modem.hpp"

namespace obscma {

inline constexpr double kSpeedOfLight = 299792458.0;

struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Highway strip served by RRHs placed on the x axis: users live in
// [0, d_h] x [d_p, d_p + d_w] and drive toward +x.
struct HighwayGeometry {
    double d_h = 1000.0;
    double d_p = 150.0;
    double d_w = 50.0;

    void validate() const { require(d_h > 0.0 && d_p > 0.0 && d_w > 0.0, "geometry distances must be positive"); }
};

struct UserGeometry {
    Point position;
    std::array<Point, 2> rrh_positions{};
    double velocity_kmh = 300.0;

    void validate(const HighwayGeometry& highway) const {
        require(position.x >= 0.0 && position.x <= highway.d_h, "user x outside [0, d_h]");
        require(position.y >= highway.d_p && position.y <= highway.d_p + highway.d_w,
                "user y outside [d_p, d_p + d_w]");
        require(velocity_kmh >= 0.0, "velocity must be non-negative");
    }
};

// PL(d) in dB with d in kilometres.
inline double pathloss_db(double distance_km) {
    require(distance_km > 0.0, "pathloss distance must be positive");
    return 142.1 + 37.6 * std::log10(distance_km);
}

inline double max_doppler_hz(double velocity_kmh, double carrier_hz) {
    return velocity_kmh / 3.6 / kSpeedOfLight * carrier_hz;
}

// Doppler shift split into integer bin k and fraction beta in (-0.5, 0.5]
// of the grid resolution 1/(NT).
struct Doppler {
    double nu = 0.0;
    int index = 0;
    double frac = 0.0;
};

inline double normalized_doppler(double nu, const OtfsGrid& grid) {
    return nu * (static_cast<double>(grid.N) * grid.T());
}

inline Doppler split_doppler(double nu, const OtfsGrid& grid) {
    const double x = normalized_doppler(nu, grid);
    double k = std::round(x);
    if (x - k <= -0.5) k -= 1.0;
    return Doppler{nu, static_cast<int>(k), x - k};
}

inline Doppler jakes_doppler_at_angle(double v_max, double angle, const OtfsGrid& grid) {
    return split_doppler(v_max * std::cos(angle), grid);
}

// Angle uniform on [0, pi/2] when approaching the receiver, [pi/2, pi] otherwise.
template <std::uniform_random_bit_generator Rng>
Doppler jakes_doppler(double v_max, bool toward, const OtfsGrid& grid, Rng& rng) {
    require(v_max >= 0.0, "maximum Doppler must be non-negative");
    std::uniform_real_distribution<double> angle(toward ? 0.0 : kPi / 2.0, toward ? kPi / 2.0 : kPi);
    return jakes_doppler_at_angle(v_max, angle(rng), grid);
}

// Raised-cosine pulse, unit peak, zeros at non-zero multiples of Ts.
inline double rc_pulse(double tau, double rolloff, double Ts) {
    require(rolloff > 0.0 && rolloff <= 1.0, "rolloff must lie in (0, 1]");
    const double x = tau / Ts;
    const auto sinc = [](double v) { return v == 0.0 ? 1.0 : std::sin(kPi * v) / (kPi * v); };
    const double edge = 1.0 / (2.0 * rolloff);
    if (std::abs(std::abs(x) - edge) < 1e-9) {
        return kPi / 4.0 * sinc(edge);
    }
    const double denom = 1.0 - (2.0 * rolloff * x) * (2.0 * rolloff * x);
    return sinc(x) * std::cos(kPi * rolloff * x) / denom;
}

enum class ProfileMode {
    Uniform,      // every path has variance 1/L
    Exponential,  // variances follow the configured power-delay profile
};

inline ProfileMode parse_profile_mode(const std::string& name) {
    if (name == "uniform") return ProfileMode::Uniform;
    if (name == "exponential") return ProfileMode::Exponential;
    throw InvalidInput("unknown profile mode '" + name + "'");
}

inline const char* to_string(ProfileMode mode) { return mode == ProfileMode::Uniform ? "uniform" : "exponential"; }

struct ChannelProfile {
    std::size_t L = 4;
    std::vector<double> delays;      // seconds
    std::vector<double> powers_db;   // relative path powers
    double rolloff = 0.4;
    std::size_t pulse_span = 4;      // taps kept beyond the last path delay
    double pulse_threshold = 1e-3;   // smaller pulse samples are dropped
    double timing_offset_max = 0.0;  // seconds; offsets drawn uniformly in [0, max]
    ProfileMode mode = ProfileMode::Uniform;

    void validate() const {
        require(L >= 1, "need at least one path");
        require(delays.size() >= L, "profile lists fewer delays than L");
        require(mode == ProfileMode::Uniform || powers_db.size() >= L, "profile lists fewer powers than L");
        require(rolloff > 0.0 && rolloff <= 1.0, "rolloff must lie in (0, 1]");
        require(timing_offset_max >= 0.0, "timing offset bound must be non-negative");
        for (std::size_t i = 0; i < L; ++i) require(delays[i] >= 0.0, "delays must be non-negative");
    }

    // Per-path gain variances, normalized to unit total power.
    std::vector<double> path_variances() const {
        std::vector<double> v(L, 1.0 / static_cast<double>(L));
        if (mode == ProfileMode::Exponential) {
            double total = 0.0;
            for (std::size_t i = 0; i < L; ++i) total += v[i] = db_to_linear(powers_db[i]);
            for (auto& x : v) x /= total;
        }
        return v;
    }
};

struct Path {
    Complex gain;
    double delay = 0.0;  // seconds
    Doppler doppler;
};

struct MultipathChannel {
    std::vector<Path> paths;
    double timing_offset = 0.0;
    std::size_t num_taps = 1;
    double pathloss_db = 0.0;
    double rolloff = 0.4;
    std::size_t pulse_span = 4;
    double pulse_threshold = 1e-3;

    double amplitude() const { return std::pow(10.0, -pathloss_db / 20.0); }
};

// P_rc(p Ts - t - tau_i), with negligible samples zeroed.
inline double tap_weight(const MultipathChannel& ch, const Path& path, std::size_t p, const OtfsGrid& grid) {
    const double Ts = grid.Ts();
    const double w = rc_pulse(static_cast<double>(p) * Ts - ch.timing_offset - path.delay, ch.rolloff, Ts);
    return std::abs(w) >= ch.pulse_threshold ? w : 0.0;
}

// Tap count: ceil((t + max tau)/Ts) + pulse_span, trimmed of trailing taps
// that carry no significant pulse energy for any path.
inline std::size_t required_taps(const MultipathChannel& ch, const OtfsGrid& grid) {
    double max_delay = 0.0;
    for (const auto& path : ch.paths) max_delay = std::max(max_delay, path.delay);
    const auto span = static_cast<std::size_t>(std::ceil((ch.timing_offset + max_delay) / grid.Ts() - 1e-9));
    std::size_t taps = span + ch.pulse_span;
    while (taps > std::max<std::size_t>(span, 1)) {
        bool significant = false;
        for (const auto& path : ch.paths) significant = significant || tap_weight(ch, path, taps - 1, grid) != 0.0;
        if (significant) break;
        --taps;
    }
    return std::max<std::size_t>(taps, 1);
}

template <std::uniform_random_bit_generator Rng>
Complex complex_gaussian(double variance, Rng& rng) {
    std::normal_distribution<double> n(0.0, std::sqrt(variance / 2.0));
    const double re = n(rng);
    return {re, n(rng)};
}

// Draws the channel from the user to RRH `rrh`. The Doppler sign is positive
// toward an RRH ahead of the user (+x) and negative toward one behind.
template <std::uniform_random_bit_generator Rng>
MultipathChannel generate_channel(const UserGeometry& geometry, std::size_t rrh, const ChannelProfile& profile,
                                  const OtfsGrid& grid, double carrier_hz, Rng& rng) {
    profile.validate();
    require(rrh < geometry.rrh_positions.size(), "RRH index out of range");
    const Point& site = geometry.rrh_positions[rrh];
    const bool toward = site.x > geometry.position.x;
    const double v_max = max_doppler_hz(geometry.velocity_kmh, carrier_hz);

    MultipathChannel ch;
    ch.rolloff = profile.rolloff;
    ch.pulse_span = profile.pulse_span;
    ch.pulse_threshold = profile.pulse_threshold;
    ch.pathloss_db = pathloss_db(distance(geometry.position, site) / 1000.0);
    const auto variances = profile.path_variances();
    for (std::size_t i = 0; i < profile.L; ++i) {
        Path path;
        path.gain = complex_gaussian(variances[i], rng);
        path.delay = profile.delays[i];
        path.doppler = jakes_doppler(v_max, toward, grid, rng);
        ch.paths.push_back(path);
    }
    if (profile.timing_offset_max > 0.0) {
        ch.timing_offset = std::uniform_real_distribution<double>(0.0, profile.timing_offset_max)(rng);
    }
    ch.num_taps = required_taps(ch, grid);
    return ch;
}

// r[c] = sum_p g[c,p] s[c-p] over the CP-extended frame with
// g[c,p] = sqrt(PL) sum_i h_i exp(j 2 pi nu_i (c-p) Ts) P_rc(p Ts - t - tau_i).
// Sample index 0 is the first payload sample; the prefix occupies negative
// indices and samples before the prefix are silent.
inline TimeDomainSignal apply_time_domain(const TimeDomainSignal& s, const MultipathChannel& ch,
                                          const OtfsGrid& grid) {
    require(s.payload_size() == grid.size(), "transmitted payload length differs from MN");
    if (ch.num_taps > s.cp_len + 1) {
        throw InterFrameInterference("cyclic prefix of " + std::to_string(s.cp_len) + " samples cannot absorb " +
                                     std::to_string(ch.num_taps) + " channel taps");
    }
    const auto cp = static_cast<std::ptrdiff_t>(s.cp_len);
    const auto total = static_cast<std::ptrdiff_t>(s.samples.size());
    const double Ts = grid.Ts();
    TimeDomainSignal r;
    r.cp_len = s.cp_len;
    r.samples = CVector::Zero(total);
    for (const auto& path : ch.paths) {
        for (std::size_t p = 0; p < ch.num_taps; ++p) {
            const double w = tap_weight(ch, path, p, grid);
            if (w == 0.0) continue;
            const Complex a = ch.amplitude() * path.gain * w;
            const auto lag = static_cast<std::ptrdiff_t>(p);
            for (std::ptrdiff_t pos = lag; pos < total; ++pos) {
                const auto src_time = pos - cp - lag;  // c - p
                const Complex doppler = std::polar(1.0, 2.0 * kPi * path.doppler.nu * static_cast<double>(src_time) * Ts);
                r.samples[pos] += a * doppler * s.samples[pos - lag];
            }
        }
    }
    return r;
}

using DelayDopplerMatrix = Eigen::SparseMatrix<Complex>;

namespace detail {

// Sum_n exp(j 2 pi n (q + beta) / N): inter-Doppler leakage of bin offset q.
inline Complex doppler_leakage(std::size_t q, double beta, std::size_t N) {
    if (beta == 0.0) return q == 0 ? Complex(static_cast<double>(N), 0.0) : Complex(0.0, 0.0);
    const double x = static_cast<double>(q) + beta;
    return (std::polar(1.0, 2.0 * kPi * x) - 1.0) / (std::polar(1.0, 2.0 * kPi * x / static_cast<double>(N)) - 1.0);
}

// Calls visit(row, col, coefficient) for every contribution of one path with
// unit gain and no pathloss: Y[l,k] += coefficient * X[[l-p]_M, [k-k_i+q]_N].
template <typename Visitor>
void for_each_path_term(const MultipathChannel& ch, const Path& path, const OtfsGrid& grid, Visitor&& visit) {
    const auto M = static_cast<std::ptrdiff_t>(grid.M);
    const auto N = static_cast<std::ptrdiff_t>(grid.N);
    const double MN = static_cast<double>(grid.size());
    const double doppler = static_cast<double>(path.doppler.index) + path.doppler.frac;
    const std::size_t q_count = path.doppler.frac == 0.0 ? 1 : grid.N;
    std::vector<Complex> leakage(q_count);
    for (std::size_t q = 0; q < q_count; ++q) leakage[q] = doppler_leakage(q, path.doppler.frac, grid.N) / static_cast<double>(N);

    for (std::size_t p = 0; p < ch.num_taps; ++p) {
        const double w = tap_weight(ch, path, p, grid);
        if (w == 0.0) continue;
        const auto lag = static_cast<std::ptrdiff_t>(p);
        for (std::ptrdiff_t l = 0; l < M; ++l) {
            const std::ptrdiff_t src_delay = wrap(l - lag, M);
            const std::ptrdiff_t blocks_back = l >= lag ? 0 : (lag - l + M - 1) / M;
            const Complex xi = std::polar(1.0, 2.0 * kPi * static_cast<double>(l - lag) * doppler / MN);
            for (std::ptrdiff_t k = 0; k < N; ++k) {
                const auto row = static_cast<std::size_t>(k * M + l);
                for (std::size_t q = 0; q < q_count; ++q) {
                    const std::ptrdiff_t src_doppler = wrap(k - path.doppler.index + static_cast<std::ptrdiff_t>(q), N);
                    Complex coeff = w * xi * leakage[q];
                    if (blocks_back > 0) {
                        coeff *= std::polar(1.0, -2.0 * kPi * static_cast<double>(blocks_back * src_doppler) /
                                                     static_cast<double>(N));
                    }
                    visit(row, static_cast<std::size_t>(src_doppler * M + src_delay), coeff);
                }
            }
        }
    }
}

}  // namespace detail

// Delay-Doppler input-output matrix H with vec(Y) = H vec(X) under
// rectangular pulses, pathloss included.
inline DelayDopplerMatrix build_dd_matrix(const MultipathChannel& ch, const OtfsGrid& grid) {
    std::vector<Eigen::Triplet<Complex>> triplets;
    const double amp = ch.amplitude();
    for (const auto& path : ch.paths) {
        const Complex scale = amp * path.gain;
        detail::for_each_path_term(ch, path, grid, [&](std::size_t row, std::size_t col, Complex coeff) {
            triplets.emplace_back(static_cast<int>(row), static_cast<int>(col), scale * coeff);
        });
    }
    const auto n = static_cast<Eigen::Index>(grid.size());
    DelayDopplerMatrix H(n, n);
    H.setFromTriplets(triplets.begin(), triplets.end());
    H.prune(Complex(0.0, 0.0));
    return H;
}

// Norm-bounded CSI error: each true quantity equals the returned estimate
// plus an error of magnitude at most eps times the true value (disk for
// gains, interval for delays and Dopplers).
template <std::uniform_random_bit_generator Rng>
MultipathChannel perturb_csi(const MultipathChannel& truth, double eps, const OtfsGrid& grid, Rng& rng) {
    require(eps >= 0.0, "CSI error radius must be non-negative");
    if (eps == 0.0) return truth;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto interval = [&](double value) { return (2.0 * unit(rng) - 1.0) * eps * std::abs(value); };
    MultipathChannel est = truth;
    for (auto& path : est.paths) {
        const double radius = eps * std::abs(path.gain) * std::sqrt(unit(rng));
        const double angle = 2.0 * kPi * unit(rng);
        path.gain -= std::polar(radius, angle);
        path.delay -= interval(path.delay);
        path.delay = std::max(path.delay, 0.0);
        path.doppler = split_doppler(path.doppler.nu - interval(path.doppler.nu), grid);
    }
    est.num_taps = required_taps(est, grid);
    return est;
}

}  // namespace obscma
