#pragma once

// Slow, direct reference computations used to check the library.

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "obscma/obscma.hpp"

namespace oracle {

using obscma::CMatrix;
using obscma::Complex;
using obscma::CVector;

inline constexpr double kPi = 3.14159265358979323846;

inline CMatrix dft_matrix(std::size_t n) {
    CMatrix F(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) {
            F(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                std::polar(1.0 / std::sqrt(static_cast<double>(n)), -2.0 * kPi * static_cast<double>(a * b) / static_cast<double>(n));
        }
    }
    return F;
}

inline CMatrix isfft(const CMatrix& X) {
    return dft_matrix(static_cast<std::size_t>(X.rows())) * X * dft_matrix(static_cast<std::size_t>(X.cols())).adjoint();
}

// s[n*M + m'] = (1/sqrt(M)) sum_m Xtf[m, n] e^{j 2 pi m m' / M}
inline CVector heisenberg(const CMatrix& tf) {
    const auto M = tf.rows();
    const auto N = tf.cols();
    CVector s = CVector::Zero(M * N);
    for (Eigen::Index n = 0; n < N; ++n) {
        for (Eigen::Index mp = 0; mp < M; ++mp) {
            Complex acc = 0.0;
            for (Eigen::Index m = 0; m < M; ++m) acc += tf(m, n) * std::polar(1.0, 2.0 * kPi * static_cast<double>(m * mp) / static_cast<double>(M));
            s[n * M + mp] = acc / std::sqrt(static_cast<double>(M));
        }
    }
    return s;
}

inline CMatrix wigner(const CVector& r, Eigen::Index M, Eigen::Index N) {
    CMatrix Y(M, N);
    for (Eigen::Index n = 0; n < N; ++n) {
        for (Eigen::Index m = 0; m < M; ++m) {
            Complex acc = 0.0;
            for (Eigen::Index mp = 0; mp < M; ++mp) acc += r[n * M + mp] * std::polar(1.0, -2.0 * kPi * static_cast<double>(m * mp) / static_cast<double>(M));
            Y(m, n) = acc / std::sqrt(static_cast<double>(M));
        }
    }
    return Y;
}

inline CMatrix sfft(const CMatrix& Y) {
    return dft_matrix(static_cast<std::size_t>(Y.rows())).adjoint() * Y * dft_matrix(static_cast<std::size_t>(Y.cols()));
}

// Raised cosine from the textbook form, with the singular points evaluated
// as the mean of two nearby samples.
inline double rc(double t, double alpha, double Ts) {
    const auto f = [&](double x) {
        const double sinc = x == 0.0 ? 1.0 : std::sin(kPi * x) / (kPi * x);
        return sinc * std::cos(kPi * alpha * x) / (1.0 - 4.0 * alpha * alpha * x * x);
    };
    const double x = t / Ts;
    if (std::abs(std::abs(x) - 1.0 / (2.0 * alpha)) < 1e-7) return 0.5 * (f(x + 1e-6) + f(x - 1e-6));
    return f(x);
}

// r[c] = sqrt(PL) sum_p sum_i h_i e^{j 2 pi nu_i (c - p) Ts} P_rc(p Ts - t - tau_i) s[[c - p]_MN]
// on the payload alone (cyclic prefix equivalent).
inline CVector cyclic_channel(const CVector& s, const obscma::MultipathChannel& ch, const obscma::OtfsGrid& grid) {
    const auto MN = static_cast<std::ptrdiff_t>(grid.size());
    const double Ts = grid.Ts();
    CVector r = CVector::Zero(MN);
    for (std::ptrdiff_t c = 0; c < MN; ++c) {
        for (std::size_t p = 0; p < ch.num_taps; ++p) {
            Complex g = 0.0;
            for (const auto& path : ch.paths) {
                double w = rc(static_cast<double>(p) * Ts - ch.timing_offset - path.delay, ch.rolloff, Ts);
                if (std::abs(w) < ch.pulse_threshold) w = 0.0;
                g += path.gain * std::polar(1.0, 2.0 * kPi * path.doppler.nu * static_cast<double>(c - static_cast<std::ptrdiff_t>(p)) * Ts) * w;
            }
            const std::ptrdiff_t src = ((c - static_cast<std::ptrdiff_t>(p)) % MN + MN) % MN;
            r[c] += ch.amplitude() * g * s[src];
        }
    }
    return r;
}

inline double q_function(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

// Posterior over codewords from the product of prior and incoming Gaussian
// messages, each CN(chi_i; C, D).
inline std::vector<double> gaussian_product_posterior(const CMatrix& alphabet, const std::vector<double>& prior,
                                                      const std::vector<std::vector<obscma::GaussianMessage>>& incoming) {
    const auto Q = static_cast<std::size_t>(alphabet.rows());
    std::vector<double> p(Q);
    double total = 0.0;
    for (std::size_t q = 0; q < Q; ++q) {
        double v = prior.empty() ? 1.0 : prior[q];
        for (std::size_t i = 0; i < incoming.size(); ++i) {
            for (const auto& m : incoming[i]) {
                v *= std::exp(-std::norm(alphabet(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(i)) - m.mean) / m.var) / (kPi * m.var);
            }
        }
        p[q] = v;
        total += v;
    }
    for (auto& v : p) v /= total;
    return p;
}

// Joint MAP over all codeword blocks of a dense model y = A x + w with
// equiprobable codewords: x stacks the D non-zeros of each block.
inline std::vector<std::size_t> joint_map(const CVector& y, const CMatrix& A,
                                          const std::vector<CMatrix>& block_alphabets) {
    const std::size_t C = block_alphabets.size();
    const auto Q = static_cast<std::size_t>(block_alphabets.front().rows());
    const auto D = block_alphabets.front().cols();
    std::uint64_t total = 1;
    for (std::size_t c = 0; c < C; ++c) total *= Q;
    std::vector<std::size_t> best(C, 0), digits(C, 0);
    double best_metric = std::numeric_limits<double>::infinity();
    CVector x(static_cast<Eigen::Index>(C) * D);
    for (std::uint64_t h = 0; h < total; ++h) {
        std::uint64_t v = h;
        for (std::size_t c = C; c-- > 0;) {
            digits[c] = static_cast<std::size_t>(v % Q);
            v /= Q;
        }
        for (std::size_t c = 0; c < C; ++c) x.segment(static_cast<Eigen::Index>(c) * D, D) = block_alphabets[c].row(static_cast<Eigen::Index>(digits[c])).transpose();
        const double metric = (y - A * x).squaredNorm();
        if (metric < best_metric) {
            best_metric = metric;
            best = digits;
        }
    }
    return best;
}

}  // namespace oracle
