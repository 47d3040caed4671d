#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "obscma/common.hpp"
#include "obscma/grid.hpp"

namespace obscma {

enum class AllocationAxis { Delay, Doppler };

inline AllocationAxis parse_allocation_axis(const std::string& name) {
    if (name == "delay") return AllocationAxis::Delay;
    if (name == "doppler") return AllocationAxis::Doppler;
    throw InvalidInput("unknown allocation axis '" + name + "'");
}

inline const char* to_string(AllocationAxis axis) {
    return axis == AllocationAxis::Delay ? "delay" : "doppler";
}

// J user codebooks, each holding Q sparse K-dimensional codewords whose D
// non-zero entries sit on a fixed per-user support. Users are 0-based.
class ScmaCodebook {
public:
    ScmaCodebook(std::size_t K, std::size_t D, std::vector<std::vector<CVector>> codewords)
        : K_(K), D_(D), codewords_(std::move(codewords)) {
        validate();
    }

    std::size_t num_users() const { return codewords_.size(); }
    std::size_t num_resources() const { return K_; }
    std::size_t num_nonzero() const { return D_; }
    std::size_t size() const { return codewords_.front().size(); }
    std::size_t bits_per_codeword() const { return static_cast<std::size_t>(std::countr_zero(size())); }

    const CVector& codeword(std::size_t user, std::size_t index) const { return codewords_.at(user).at(index); }
    const std::vector<std::size_t>& support(std::size_t user) const { return supports_.at(user); }

    // Q x D matrix of the non-zero entries of user's codewords, ordered by support.
    const CMatrix& nonzero_alphabet(std::size_t user) const { return alphabets_.at(user); }

    // Mean energy of a single non-zero codeword element over all users.
    double mean_element_energy() const {
        double total = 0.0;
        for (const auto& a : alphabets_) total += a.squaredNorm();
        return total / static_cast<double>(alphabets_.size() * size() * D_);
    }

private:
    void validate() {
        require(K_ > 0 && D_ > 0 && D_ <= K_, "codebook needs 0 < D <= K");
        require(!codewords_.empty(), "codebook has no users");
        const std::size_t Q = codewords_.front().size();
        require(Q >= 2 && std::has_single_bit(Q), "codebook size Q must be a power of two");
        constexpr double kZero = 1e-12;

        std::vector<std::size_t> occupancy(K_, 0);
        double energy = 0.0;
        for (std::size_t j = 0; j < codewords_.size(); ++j) {
            const auto& user = codewords_[j];
            require(user.size() == Q, "every user needs Q codewords");
            std::vector<bool> used(K_, false);
            for (const auto& cw : user) {
                require(static_cast<std::size_t>(cw.size()) == K_, "codeword length differs from K");
                std::size_t nnz = 0;
                for (std::size_t k = 0; k < K_; ++k) {
                    require(std::isfinite(cw[k].real()) && std::isfinite(cw[k].imag()), "non-finite codeword entry");
                    if (std::abs(cw[k]) > kZero) {
                        ++nnz;
                        used[k] = true;
                    }
                }
                require(nnz == D_, "codeword of user " + std::to_string(j) + " does not have exactly D non-zeros");
                energy += cw.squaredNorm();
            }
            std::vector<std::size_t> support;
            for (std::size_t k = 0; k < K_; ++k) {
                if (used[k]) support.push_back(k);
            }
            require(support.size() == D_, "codewords of user " + std::to_string(j) + " do not share one support");
            for (auto k : support) ++occupancy[k];

            for (std::size_t a = 0; a < Q; ++a) {
                for (std::size_t b = a + 1; b < Q; ++b) {
                    require((user[a] - user[b]).norm() > kZero, "duplicate codewords for user " + std::to_string(j));
                }
            }

            CMatrix alphabet(Q, D_);
            for (std::size_t q = 0; q < Q; ++q) {
                for (std::size_t i = 0; i < D_; ++i) alphabet(q, i) = user[q][support[i]];
            }
            supports_.push_back(std::move(support));
            alphabets_.push_back(std::move(alphabet));
        }

        const std::size_t J = codewords_.size();
        require((J * D_) % K_ == 0, "J*D must be a multiple of K for a regular mapping");
        for (auto count : occupancy) {
            require(count == J * D_ / K_, "resource occupancy is not regular");
        }
        const double mean_energy = energy / static_cast<double>(J * Q);
        require(std::abs(mean_energy - 1.0) < 1e-6, "average codeword energy must be 1");
    }

    std::size_t K_;
    std::size_t D_;
    std::vector<std::vector<CVector>> codewords_;
    std::vector<std::vector<std::size_t>> supports_;
    std::vector<CMatrix> alphabets_;
};

// Parses {J, K, D, Q, codebooks: [user][codeword][resource] = [re, im]}.
inline ScmaCodebook codebook_from_json(const nlohmann::json& doc) {
    try {
        const auto J = doc.at("J").get<std::size_t>();
        const auto K = doc.at("K").get<std::size_t>();
        const auto D = doc.at("D").get<std::size_t>();
        const auto Q = doc.at("Q").get<std::size_t>();
        const auto& users = doc.at("codebooks");
        require(users.is_array() && users.size() == J, "codebooks must list J users");
        std::vector<std::vector<CVector>> codewords(J);
        for (std::size_t j = 0; j < J; ++j) {
            const auto& user = users[j];
            require(user.is_array() && user.size() == Q, "user " + std::to_string(j) + " must list Q codewords");
            for (const auto& cw : user) {
                require(cw.is_array() && cw.size() == K, "codeword must have K entries");
                CVector v(static_cast<Eigen::Index>(K));
                for (std::size_t k = 0; k < K; ++k) {
                    const auto& e = cw[k];
                    require(e.is_array() && e.size() == 2, "codeword entries are [re, im] pairs");
                    v[static_cast<Eigen::Index>(k)] = Complex(e[0].get<double>(), e[1].get<double>());
                }
                codewords[j].push_back(std::move(v));
            }
        }
        return ScmaCodebook(K, D, std::move(codewords));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed codebook: ") + e.what());
    }
}

inline ScmaCodebook load_codebook(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open codebook file " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("codebook file " + path.string() + " is not valid JSON: " + e.what());
    }
    return codebook_from_json(doc);
}

inline std::size_t codewords_per_frame(const OtfsGrid& grid, std::size_t K) { return grid.size() / K; }

// Consecutive log2(Q)-bit groups, read big-endian, become codeword indices.
inline std::vector<std::size_t> map_bits(std::span<const std::uint8_t> bits, const ScmaCodebook& codebook,
                                         std::size_t user) {
    require(user < codebook.num_users(), "user index out of range");
    const std::size_t width = codebook.bits_per_codeword();
    require(bits.size() % width == 0, "bit count is not a multiple of log2(Q)");
    std::vector<std::size_t> indices(bits.size() / width);
    for (std::size_t t = 0; t < indices.size(); ++t) {
        std::size_t value = 0;
        for (std::size_t b = 0; b < width; ++b) {
            const auto bit = bits[t * width + b];
            require(bit <= 1, "bits must be 0 or 1");
            value = (value << 1) | bit;
        }
        indices[t] = value;
    }
    return indices;
}

inline std::vector<std::uint8_t> demap(std::span<const std::size_t> indices, std::size_t Q) {
    require(Q >= 2 && std::has_single_bit(Q), "Q must be a power of two");
    const auto width = static_cast<std::size_t>(std::countr_zero(Q));
    std::vector<std::uint8_t> bits;
    bits.reserve(indices.size() * width);
    for (auto index : indices) {
        require(index < Q, "codeword index out of range");
        for (std::size_t b = width; b-- > 0;) bits.push_back(static_cast<std::uint8_t>((index >> b) & 1U));
    }
    return bits;
}

inline std::size_t bit_difference(std::span<const std::size_t> a, std::span<const std::size_t> b) {
    require(a.size() == b.size(), "index sequences differ in length");
    std::size_t count = 0;
    for (std::size_t t = 0; t < a.size(); ++t) count += static_cast<std::size_t>(std::popcount(a[t] ^ b[t]));
    return count;
}

inline void check_allocation(const OtfsGrid& grid, std::size_t K, AllocationAxis axis) {
    if (axis == AllocationAxis::Delay) {
        require(grid.M % K == 0, "M must be a multiple of K for delay-axis allocation");
    } else {
        require(grid.N % K == 0, "N must be a multiple of K for Doppler-axis allocation");
    }
}

// Vectorized grid indices (k*M + l) of the K bins occupied by codeword slot t.
// Delay axis: slots fill K-row blocks of a column, columns left to right.
// Doppler axis: slots fill K-column blocks of a row, rows top to bottom.
inline std::vector<std::size_t> slot_positions(std::size_t slot, const OtfsGrid& grid, std::size_t K,
                                               AllocationAxis axis) {
    check_allocation(grid, K, axis);
    require(slot < codewords_per_frame(grid, K), "codeword slot out of range");
    std::vector<std::size_t> positions(K);
    if (axis == AllocationAxis::Delay) {
        const std::size_t per_column = grid.M / K;
        const std::size_t column = slot / per_column;
        const std::size_t first_row = K * (slot % per_column);
        for (std::size_t r = 0; r < K; ++r) positions[r] = grid.index(first_row + r, column);
    } else {
        const std::size_t per_row = grid.N / K;
        const std::size_t row = slot / per_row;
        const std::size_t first_col = K * (slot % per_row);
        for (std::size_t r = 0; r < K; ++r) positions[r] = grid.index(row, first_col + r);
    }
    return positions;
}

inline CMatrix allocate(std::span<const std::size_t> indices, const ScmaCodebook& codebook, const OtfsGrid& grid,
                        AllocationAxis axis, std::size_t user) {
    const std::size_t K = codebook.num_resources();
    check_allocation(grid, K, axis);
    require(indices.size() == codewords_per_frame(grid, K), "need MN/K codeword indices per frame");
    require(user < codebook.num_users(), "user index out of range");
    CMatrix frame = CMatrix::Zero(static_cast<Eigen::Index>(grid.M), static_cast<Eigen::Index>(grid.N));
    Complex* data = frame.data();
    for (std::size_t t = 0; t < indices.size(); ++t) {
        require(indices[t] < codebook.size(), "codeword index out of range");
        const CVector& cw = codebook.codeword(user, indices[t]);
        const auto positions = slot_positions(t, grid, K, axis);
        for (auto k : codebook.support(user)) data[positions[k]] = cw[static_cast<Eigen::Index>(k)];
    }
    return frame;
}

// Reads the K-bin blocks back out of a frame, in slot order.
inline std::vector<CVector> deallocate(const CMatrix& frame, std::size_t K, const OtfsGrid& grid,
                                       AllocationAxis axis) {
    require(static_cast<std::size_t>(frame.rows()) == grid.M && static_cast<std::size_t>(frame.cols()) == grid.N,
            "frame shape does not match the grid");
    std::vector<CVector> blocks(codewords_per_frame(grid, K));
    const Complex* data = frame.data();
    for (std::size_t t = 0; t < blocks.size(); ++t) {
        const auto positions = slot_positions(t, grid, K, axis);
        blocks[t].resize(static_cast<Eigen::Index>(K));
        for (std::size_t r = 0; r < K; ++r) blocks[t][static_cast<Eigen::Index>(r)] = data[positions[r]];
    }
    return blocks;
}

}  // namespace obscma
