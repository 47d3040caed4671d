#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "obscma/channel.hpp"
#include "obscma/codebook.hpp"
#include "obscma/common.hpp"
#include "obscma/detectors.hpp"
#include "obscma/grid.hpp"
#include "obscma/parallel.hpp"

namespace obscma {

// Phi^(u)(X): column i is the response of path i of channel u to frame X,
// with unit gain and no pathloss. Phi^(u)(X) h_u == H_u vec(X) / sqrt(PL_u).
inline CMatrix codeword_matrix(const CMatrix& X, const MultipathChannel& ch, const OtfsGrid& grid) {
    require(static_cast<std::size_t>(X.rows()) == grid.M && static_cast<std::size_t>(X.cols()) == grid.N,
            "frame shape does not match the grid");
    const Complex* x = X.data();
    CMatrix phi = CMatrix::Zero(static_cast<Eigen::Index>(grid.size()), static_cast<Eigen::Index>(ch.paths.size()));
    for (std::size_t i = 0; i < ch.paths.size(); ++i) {
        const auto col = static_cast<Eigen::Index>(i);
        detail::for_each_path_term(ch, ch.paths[i], grid, [&](std::size_t row, std::size_t src, Complex coeff) {
            phi(static_cast<Eigen::Index>(row), col) += coeff * x[src];
        });
    }
    return phi;
}

struct EquivalentCodewordMatrix {
    std::vector<CMatrix> per_rrh;

    // Block-diagonal stack with block u scaled by weights[u].
    CMatrix stacked(std::span<const double> weights) const {
        require(weights.size() == per_rrh.size(), "need one weight per branch");
        Eigen::Index rows = 0, cols = 0;
        for (const auto& b : per_rrh) {
            rows += b.rows();
            cols += b.cols();
        }
        CMatrix out = CMatrix::Zero(rows, cols);
        Eigen::Index r = 0, c = 0;
        for (std::size_t u = 0; u < per_rrh.size(); ++u) {
            out.block(r, c, per_rrh[u].rows(), per_rrh[u].cols()) = weights[u] * per_rrh[u];
            r += per_rrh[u].rows();
            c += per_rrh[u].cols();
        }
        return out;
    }
};

inline EquivalentCodewordMatrix build_codeword_matrix(const CMatrix& X, std::span<const MultipathChannel> channels,
                                                      const OtfsGrid& grid) {
    EquivalentCodewordMatrix out;
    for (const auto& ch : channels) out.per_rrh.push_back(codeword_matrix(X, ch, grid));
    return out;
}

inline double q_approx(double x) { return std::exp(-x * x / 2.0) / 12.0 + std::exp(-2.0 * x * x / 3.0) / 4.0; }

inline double q_function(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

struct PairwiseErrorProbability {
    double exact = 0.0;
    double approx = 0.0;
};

// Pr(X -> X^ | h) for y = sqrt(P) Phi(X) h + w, rho = P / N0. phi_x and
// phi_xhat already carry the pathloss weighting.
inline PairwiseErrorProbability conditional_pep(const CMatrix& phi_x, const CMatrix& phi_xhat, const CVector& h,
                                                double rho) {
    require(rho >= 0.0, "SNR must be non-negative");
    const double dist = ((phi_x - phi_xhat) * h).squaredNorm();
    const double x = std::sqrt(rho / 2.0 * dist);
    return {q_function(x), q_approx(x)};
}

struct PositionRegion {
    double x_min = 0.0, x_max = 1000.0;
    double y_min = 150.0, y_max = 200.0;
};

// Monte Carlo mean of the linear pathloss gain 10^(-PL/10) for users uniform
// over the region. A degenerate region is a single point.
template <std::uniform_random_bit_generator Rng>
double mean_pathloss(const PositionRegion& region, const Point& rrh, std::size_t samples, Rng& rng) {
    require(samples >= 1, "need at least one sample");
    require(region.x_min <= region.x_max && region.y_min <= region.y_max, "empty position region");
    const auto gain = [&](Point p) { return std::pow(10.0, -pathloss_db(distance(p, rrh) / 1000.0) / 10.0); };
    if (region.x_min == region.x_max && region.y_min == region.y_max) return gain({region.x_min, region.y_min});
    std::uniform_real_distribution<double> ux(region.x_min, region.x_max);
    std::uniform_real_distribution<double> uy(region.y_min, region.y_max);
    double total = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        const double x = ux(rng);
        total += gain({x, uy(rng)});
    }
    return total / static_cast<double>(samples);
}

// Non-zero eigenvalues of the Gram matrix of the (weighted) difference matrix.
inline std::vector<double> pep_spectrum(const CMatrix& difference) {
    if (difference.cols() == 0) return {};
    const CMatrix gram = difference.adjoint() * difference;
    Eigen::SelfAdjointEigenSolver<CMatrix> solver(gram, Eigen::EigenvaluesOnly);
    const auto& ev = solver.eigenvalues();
    const double peak = ev.maxCoeff();
    std::vector<double> out;
    if (!(peak > 0.0)) return out;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] > 1e-12 * peak) out.push_back(ev[i]);
    }
    return out;
}

inline std::vector<double> pep_spectrum(const CMatrix& phi_x, const CMatrix& phi_xhat) {
    return pep_spectrum(CMatrix(phi_x - phi_xhat));
}

// Eq. (18) for h ~ CN(0, gain_variance I).
inline double averaged_pep(std::span<const double> lambdas, double rho, double gain_variance) {
    double a = 1.0 / 12.0;
    double b = 1.0 / 4.0;
    for (double l : lambdas) {
        a /= 1.0 + rho * l * gain_variance / 4.0;
        b /= 1.0 + rho * l * gain_variance / 3.0;
    }
    return a + b;
}

// The paper's normalization: gain variance 2 / (L1 + L2).
inline double averaged_pep(std::span<const double> lambdas, double rho, std::size_t L1, std::size_t L2) {
    return averaged_pep(lambdas, rho, 2.0 / static_cast<double>(L1 + L2));
}

// High-SNR form of Eq. (18).
inline double asymptotic_pep(std::span<const double> lambdas, double rho, std::size_t L1, std::size_t L2) {
    const double s = 2.0 / static_cast<double>(L1 + L2);
    double a = 1.0 / 12.0;
    double b = 1.0 / 4.0;
    for (double l : lambdas) {
        a /= rho * l * s / 4.0;
        b /= rho * l * s / 3.0;
    }
    return a + b;
}

enum class GainConvention { PerBranch, Total };

inline GainConvention parse_gain_convention(const std::string& name) {
    if (name == "per_branch") return GainConvention::PerBranch;
    if (name == "total") return GainConvention::Total;
    throw InvalidInput("unknown gain convention '" + name + "'");
}

inline const char* to_string(GainConvention g) { return g == GainConvention::PerBranch ? "per_branch" : "total"; }

// Statistics the bound averages over. One entry per receive branch.
struct BoundSetup {
    std::vector<double> mean_pathloss;  // linear E[PL_u]
    std::vector<bool> toward;           // branch ahead of the user
    double v_max = 0.0;                 // Hz
    ChannelProfile profile;
    std::size_t n_ch = 100;
    GainConvention convention = GainConvention::PerBranch;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
};

// Delay, Doppler and timing draw for one branch; unit gains, no pathloss.
template <std::uniform_random_bit_generator Rng>
MultipathChannel draw_path_parameters(const ChannelProfile& profile, bool toward, double v_max, const OtfsGrid& grid,
                                      Rng& rng) {
    profile.validate();
    MultipathChannel ch;
    ch.rolloff = profile.rolloff;
    ch.pulse_span = profile.pulse_span;
    ch.pulse_threshold = profile.pulse_threshold;
    for (std::size_t i = 0; i < profile.L; ++i) {
        Path path;
        path.gain = 1.0;
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

struct AberBound {
    std::vector<double> rho;
    std::vector<double> aber;
};

// Union bound on the single-user ABER, averaged over n_ch draws of delays,
// Dopplers and timing offsets.
inline AberBound aber_union_bound(const ScmaCodebook& codebook, const OtfsGrid& grid, AllocationAxis axis,
                                  const BoundSetup& setup, std::span<const double> rho) {
    const std::size_t branches = setup.mean_pathloss.size();
    require(branches >= 1 && setup.toward.size() == branches, "need one pathloss and direction per branch");
    require(setup.n_ch >= 1, "need at least one channel draw");
    const std::size_t K = codebook.num_resources();
    const std::size_t Q = codebook.size();
    const std::size_t J = codebook.num_users();
    const std::size_t slots = codewords_per_frame(grid, K);
    check_allocation(grid, K, axis);
    std::uint64_t frames = 1;
    for (std::size_t t = 0; t < slots; ++t) {
        if (frames > kMaxMlHypotheses / Q) throw EnumerationTooLarge("union bound needs more than 2^20 frames per user");
        frames *= Q;
    }
    const double total_paths = static_cast<double>(branches * setup.profile.L);
    const double gain_var = setup.convention == GainConvention::PerBranch ? static_cast<double>(branches) / total_paths
                                                                          : 1.0 / total_paths;
    std::vector<double> weights;
    for (double pl : setup.mean_pathloss) weights.push_back(std::sqrt(pl));

    std::mt19937_64 rng(setup.seed);
    std::vector<std::vector<MultipathChannel>> draws(setup.n_ch);
    for (auto& d : draws) {
        for (std::size_t u = 0; u < branches; ++u) d.push_back(draw_path_parameters(setup.profile, setup.toward[u], setup.v_max, grid, rng));
    }

    const auto digits_of = [&](std::uint64_t h) {
        std::vector<std::size_t> d(slots);
        for (std::size_t t = slots; t-- > 0;) {
            d[t] = static_cast<std::size_t>(h % Q);
            h /= Q;
        }
        return d;
    };

    // partial[draw][rho]: sum over users and unordered pairs of 2 * PEP * e.
    std::vector<std::vector<double>> partial(setup.n_ch, std::vector<double>(rho.size(), 0.0));
    parallel_for(setup.n_ch, setup.threads, [&](std::size_t n) {
        const auto& chans = draws[n];
        for (std::size_t j = 0; j < J; ++j) {
            // Weighted Phi-bar of every (slot, codeword) placement; Phi-bar is linear in X.
            std::vector<CMatrix> unit(slots * Q);
            for (std::size_t t = 0; t < slots; ++t) {
                const auto positions = slot_positions(t, grid, K, axis);
                for (std::size_t q = 0; q < Q; ++q) {
                    CMatrix X = CMatrix::Zero(static_cast<Eigen::Index>(grid.M), static_cast<Eigen::Index>(grid.N));
                    const auto& cw = codebook.codeword(j, q);
                    for (auto k : codebook.support(j)) X.data()[positions[k]] = cw[static_cast<Eigen::Index>(k)];
                    unit[t * Q + q] = build_codeword_matrix(X, chans, grid).stacked(weights);
                }
            }
            for (std::uint64_t a = 0; a < frames; ++a) {
                const auto da = digits_of(a);
                for (std::uint64_t b = a + 1; b < frames; ++b) {
                    const auto db = digits_of(b);
                    CMatrix diff = CMatrix::Zero(unit.front().rows(), unit.front().cols());
                    for (std::size_t t = 0; t < slots; ++t) {
                        if (da[t] != db[t]) diff += unit[t * Q + da[t]] - unit[t * Q + db[t]];
                    }
                    const auto lambdas = pep_spectrum(diff);
                    const double e = static_cast<double>(bit_difference(da, db));
                    for (std::size_t r = 0; r < rho.size(); ++r) partial[n][r] += 2.0 * e * averaged_pep(lambdas, rho[r], gain_var);
                }
            }
        }
    });

    AberBound out;
    out.rho.assign(rho.begin(), rho.end());
    out.aber.assign(rho.size(), 0.0);
    const double norm = static_cast<double>(J) * static_cast<double>(frames) * static_cast<double>(slots) *
                        static_cast<double>(codebook.bits_per_codeword()) * static_cast<double>(setup.n_ch);
    for (std::size_t n = 0; n < setup.n_ch; ++n) {
        for (std::size_t r = 0; r < rho.size(); ++r) out.aber[r] += partial[n][r];
    }
    for (auto& v : out.aber) v /= norm;
    return out;
}

}  // namespace obscma
