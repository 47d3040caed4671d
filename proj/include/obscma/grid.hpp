#pragma once

#include <cstddef>

#include "obscma/common.hpp"

namespace obscma {

// Delay-Doppler grid geometry. Grid element (delay l, Doppler k) is stored at
// vectorized index k*M + l, i.e. column-major order of an M x N matrix.
struct OtfsGrid {
    std::size_t M = 64;        // subcarriers / delay bins
    std::size_t N = 16;        // time slots / Doppler bins
    double delta_f = 15e3;     // subcarrier spacing [Hz]
    std::size_t cp_len = 0;    // cyclic prefix [samples]

    double T() const { return 1.0 / delta_f; }
    double Ts() const { return 1.0 / (static_cast<double>(M) * delta_f); }
    double frame_duration() const { return static_cast<double>(N) * T(); }
    double bandwidth() const { return static_cast<double>(M) * delta_f; }
    std::size_t size() const { return M * N; }

    std::size_t index(std::size_t delay, std::size_t doppler) const { return doppler * M + delay; }

    void validate() const {
        require(M > 0 && N > 0, "grid dimensions must be positive");
        require(delta_f > 0.0, "subcarrier spacing must be positive");
        require(cp_len <= M * N, "cyclic prefix longer than the frame");
    }
};

}  // namespace obscma
