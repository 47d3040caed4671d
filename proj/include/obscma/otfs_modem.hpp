#pragma once

#include <cmath>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "obscma/common.hpp"
#include "obscma/grid.hpp"

namespace obscma {

// Time-domain frame: cp_len prefix samples followed by the MN payload.
struct TimeDomainSignal {
    CVector samples;
    std::size_t cp_len = 0;

    std::size_t payload_size() const { return static_cast<std::size_t>(samples.size()) - cp_len; }
    auto payload() const { return samples.tail(static_cast<Eigen::Index>(payload_size())); }
};

namespace detail {

enum class Direction { Forward, Inverse };

// Unitary DFT applied to every column (along_rows == false) or every row.
inline void unitary_dft(CMatrix& data, Direction dir, bool along_rows) {
    const auto len = along_rows ? data.cols() : data.rows();
    const auto count = along_rows ? data.rows() : data.cols();
    if (len == 1) return;
    Eigen::FFT<double> fft;
    std::vector<Complex> in(static_cast<std::size_t>(len));
    std::vector<Complex> out;
    const double scale_fwd = 1.0 / std::sqrt(static_cast<double>(len));
    const double scale_inv = std::sqrt(static_cast<double>(len));  // kissfft inverse already divides by len
    for (Eigen::Index c = 0; c < count; ++c) {
        for (Eigen::Index i = 0; i < len; ++i) in[static_cast<std::size_t>(i)] = along_rows ? data(c, i) : data(i, c);
        if (dir == Direction::Forward) {
            fft.fwd(out, in);
        } else {
            fft.inv(out, in);
        }
        const double scale = dir == Direction::Forward ? scale_fwd : scale_inv;
        for (Eigen::Index i = 0; i < len; ++i) {
            const Complex v = out[static_cast<std::size_t>(i)] * scale;
            if (along_rows) {
                data(c, i) = v;
            } else {
                data(i, c) = v;
            }
        }
    }
}

inline void check_frame(const CMatrix& frame, const OtfsGrid& grid) {
    require(static_cast<std::size_t>(frame.rows()) == grid.M && static_cast<std::size_t>(frame.cols()) == grid.N,
            "frame shape does not match the grid");
}

}  // namespace detail

// F_M X F_N^H with unitary DFTs.
inline CMatrix isfft(const CMatrix& dd) {
    CMatrix tf = dd;
    detail::unitary_dft(tf, detail::Direction::Forward, false);
    detail::unitary_dft(tf, detail::Direction::Inverse, true);
    return tf;
}

// F_M^H Y F_N; inverse of isfft.
inline CMatrix sfft(const CMatrix& tf) {
    CMatrix dd = tf;
    detail::unitary_dft(dd, detail::Direction::Inverse, false);
    detail::unitary_dft(dd, detail::Direction::Forward, true);
    return dd;
}

// Rectangular-pulse Heisenberg transform: an M-point IDFT per time slot,
// serialized slot-major (sample n*M + m').
inline TimeDomainSignal heisenberg(const CMatrix& tf, const OtfsGrid& grid) {
    detail::check_frame(tf, grid);
    CMatrix blocks = tf;
    detail::unitary_dft(blocks, detail::Direction::Inverse, false);
    TimeDomainSignal s;
    s.samples = Eigen::Map<const CVector>(blocks.data(), blocks.size());
    return s;
}

// Rectangular-pulse Wigner transform: an M-point DFT per time slot.
inline CMatrix wigner(const TimeDomainSignal& r, const OtfsGrid& grid) {
    require(r.payload_size() == grid.size(), "received payload length differs from MN");
    CMatrix blocks = Eigen::Map<const CMatrix>(r.payload().eval().data(), static_cast<Eigen::Index>(grid.M),
                                               static_cast<Eigen::Index>(grid.N));
    detail::unitary_dft(blocks, detail::Direction::Forward, false);
    return blocks;
}

inline TimeDomainSignal add_cp(const TimeDomainSignal& s, std::size_t cp_len) {
    require(s.cp_len == 0, "signal already carries a cyclic prefix");
    const auto n = static_cast<std::size_t>(s.samples.size());
    require(cp_len <= n, "cyclic prefix longer than the payload");
    TimeDomainSignal out;
    out.cp_len = cp_len;
    out.samples.resize(static_cast<Eigen::Index>(n + cp_len));
    out.samples.head(static_cast<Eigen::Index>(cp_len)) = s.samples.tail(static_cast<Eigen::Index>(cp_len));
    out.samples.tail(static_cast<Eigen::Index>(n)) = s.samples;
    return out;
}

inline TimeDomainSignal remove_cp(const TimeDomainSignal& r) {
    TimeDomainSignal out;
    out.samples = r.payload();
    return out;
}

inline TimeDomainSignal modulate(const CMatrix& dd, const OtfsGrid& grid) {
    detail::check_frame(dd, grid);
    return add_cp(heisenberg(isfft(dd), grid), grid.cp_len);
}

inline CMatrix demodulate(const TimeDomainSignal& r, const OtfsGrid& grid) {
    return sfft(wigner(remove_cp(r), grid));
}

}  // namespace obscma
