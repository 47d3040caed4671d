#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "obscma/channel.hpp"
#include "obscma/codebook.hpp"
#include "obscma/common.hpp"
#include "obscma/grid.hpp"

namespace obscma {

// Grouped sparse model y = H x + w. Columns of H come in C blocks of width D,
// one block per transmitted codeword (block c = user * MN/K + slot). Edges
// connect observation rows to blocks and are stored row by row; each edge
// carries the 1 x D row-block h_{d,c}, with zeros for unconnected elements.
struct ReducedSystem {
    CVector y;
    double noise_var = 0.0;
    std::size_t D = 0;
    std::vector<std::size_t> block_user;
    std::vector<std::size_t> block_slot;
    std::vector<std::size_t> row_offsets{0};
    std::vector<std::size_t> edge_row;
    std::vector<std::size_t> edge_block;
    std::vector<Complex> edge_coeff;  // edges * D
    std::vector<std::size_t> block_offsets;
    std::vector<std::size_t> block_edges;

    std::size_t rows() const { return row_offsets.size() - 1; }
    std::size_t blocks() const { return block_user.size(); }
    std::size_t edges() const { return edge_block.size(); }

    std::span<const Complex> coeff(std::size_t edge) const { return {edge_coeff.data() + edge * D, D}; }

    // I(d): blocks connected to row d.
    std::vector<std::size_t> blocks_of_row(std::size_t row) const {
        return {edge_block.begin() + static_cast<std::ptrdiff_t>(row_offsets[row]),
                edge_block.begin() + static_cast<std::ptrdiff_t>(row_offsets[row + 1])};
    }

    // J(c): rows connected to block c.
    std::vector<std::size_t> rows_of_block(std::size_t block) const {
        std::vector<std::size_t> rows;
        for (auto k = block_offsets[block]; k < block_offsets[block + 1]; ++k) rows.push_back(edge_row[block_edges[k]]);
        return rows;
    }

    void index_blocks() {
        block_offsets.assign(blocks() + 1, 0);
        for (auto c : edge_block) ++block_offsets[c + 1];
        std::partial_sum(block_offsets.begin(), block_offsets.end(), block_offsets.begin());
        block_edges.assign(edges(), 0);
        auto fill = block_offsets;
        for (std::size_t e = 0; e < edges(); ++e) block_edges[fill[edge_block[e]]++] = e;
    }
};

struct BlockLayout {
    std::vector<std::size_t> user;
    std::vector<std::size_t> slot;
    std::vector<std::vector<std::size_t>> columns;  // grid positions of the D support entries
};

inline BlockLayout block_layout(const ScmaCodebook& codebook, const OtfsGrid& grid, AllocationAxis axis) {
    const std::size_t K = codebook.num_resources();
    const std::size_t slots = codewords_per_frame(grid, K);
    BlockLayout layout;
    for (std::size_t j = 0; j < codebook.num_users(); ++j) {
        for (std::size_t t = 0; t < slots; ++t) {
            const auto positions = slot_positions(t, grid, K, axis);
            std::vector<std::size_t> cols;
            for (auto k : codebook.support(j)) cols.push_back(positions[k]);
            layout.user.push_back(j);
            layout.slot.push_back(t);
            layout.columns.push_back(std::move(cols));
        }
    }
    return layout;
}

// Builds one receive branch's grouped system from its per-user matrices
// H[j] (pathloss included) and per-user transmit powers. Zero columns are
// known from the codebook supports, so only support columns survive.
inline ReducedSystem reduce_system(const CVector& y, std::span<const DelayDopplerMatrix> H,
                                   std::span<const double> powers, double noise_var, const ScmaCodebook& codebook,
                                   const OtfsGrid& grid, AllocationAxis axis) {
    require(H.size() == codebook.num_users() && powers.size() == codebook.num_users(),
            "need one matrix and one power per user");
    require(static_cast<std::size_t>(y.size()) == grid.size(), "observation length differs from MN");
    const std::size_t D = codebook.num_nonzero();
    const auto layout = block_layout(codebook, grid, axis);

    struct Entry {
        std::size_t row;
        std::size_t block;
        std::size_t element;
        Complex value;
    };
    std::vector<Entry> entries;
    for (std::size_t c = 0; c < layout.user.size(); ++c) {
        const auto& Hj = H[layout.user[c]];
        require(static_cast<std::size_t>(Hj.rows()) == grid.size() && static_cast<std::size_t>(Hj.cols()) == grid.size(),
                "channel matrix shape differs from MN x MN");
        const double amp = std::sqrt(powers[layout.user[c]]);
        for (std::size_t i = 0; i < D; ++i) {
            for (DelayDopplerMatrix::InnerIterator it(Hj, static_cast<Eigen::Index>(layout.columns[c][i])); it; ++it) {
                if (it.value() != Complex(0.0, 0.0)) {
                    entries.push_back({static_cast<std::size_t>(it.row()), c, i, amp * it.value()});
                }
            }
        }
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        return a.row != b.row ? a.row < b.row : (a.block != b.block ? a.block < b.block : a.element < b.element);
    });

    ReducedSystem sys;
    sys.y = y;
    sys.noise_var = noise_var;
    sys.D = D;
    sys.block_user = layout.user;
    sys.block_slot = layout.slot;
    sys.row_offsets.assign(grid.size() + 1, 0);
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const auto& en = entries[k];
        const bool new_edge = k == 0 || entries[k - 1].row != en.row || entries[k - 1].block != en.block;
        if (new_edge) {
            sys.edge_row.push_back(en.row);
            sys.edge_block.push_back(en.block);
            sys.edge_coeff.resize(sys.edge_coeff.size() + D, Complex(0.0, 0.0));
            ++sys.row_offsets[en.row + 1];
        }
        sys.edge_coeff[(sys.edges() - 1) * D + en.element] += en.value;
    }
    std::partial_sum(sys.row_offsets.begin(), sys.row_offsets.end(), sys.row_offsets.begin());
    sys.index_blocks();
    return sys;
}

// Concatenates the rows of several branches that share one block layout.
inline ReducedSystem stack_systems(std::span<const ReducedSystem> branches) {
    require(!branches.empty(), "nothing to stack");
    ReducedSystem out;
    out.D = branches.front().D;
    out.noise_var = branches.front().noise_var;
    out.block_user = branches.front().block_user;
    out.block_slot = branches.front().block_slot;
    Eigen::Index total_rows = 0;
    for (const auto& b : branches) {
        require(b.block_user == out.block_user && b.D == out.D, "branches disagree on the block layout");
        require(b.noise_var == out.noise_var, "branches must share one noise variance");
        total_rows += b.y.size();
    }
    out.y.resize(total_rows);
    Eigen::Index row_base = 0;
    for (const auto& b : branches) {
        out.y.segment(row_base, b.y.size()) = b.y;
        const std::size_t edge_base = out.edges();
        for (std::size_t r = 0; r < b.rows(); ++r) out.row_offsets.push_back(edge_base + b.row_offsets[r + 1]);
        for (std::size_t e = 0; e < b.edges(); ++e) out.edge_row.push_back(b.edge_row[e] + static_cast<std::size_t>(row_base));
        out.edge_block.insert(out.edge_block.end(), b.edge_block.begin(), b.edge_block.end());
        out.edge_coeff.insert(out.edge_coeff.end(), b.edge_coeff.begin(), b.edge_coeff.end());
        row_base += b.y.size();
    }
    out.index_blocks();
    return out;
}

enum class DetectorKind { Centralized, Decentralized, MaximumLikelihood };

inline DetectorKind parse_detector_kind(const std::string& name) {
    if (name == "centralized") return DetectorKind::Centralized;
    if (name == "decentralized") return DetectorKind::Decentralized;
    if (name == "ml") return DetectorKind::MaximumLikelihood;
    throw InvalidInput("unknown detector '" + name + "'");
}

inline const char* to_string(DetectorKind kind) {
    switch (kind) {
        case DetectorKind::Centralized: return "centralized";
        case DetectorKind::Decentralized: return "decentralized";
        case DetectorKind::MaximumLikelihood: return "ml";
    }
    return "?";
}

struct DetectorConfig {
    DetectorKind algorithm = DetectorKind::Centralized;
    double damping = 0.3;          // Delta in (0, 1]
    double min_variance = 1e-8;    // epsilon
    double confidence = 0.1;       // varrho in the convergence indicator
    std::size_t n_c = 20;
    std::size_t n_i = 3;
    std::size_t n_o = 5;
    double variance_cap_factor = 1e6;  // times the mean codeword element energy
    // What a decentralized RRH divides by its peer's prior: the Gaussian
    // posterior (prior times observation messages) or the projection of the
    // discrete codeword posterior.
    enum class Exchange { Gaussian, Projected } exchange = Exchange::Gaussian;
    bool warm_start = false;  // decentralized: keep each RRH's local messages across rounds

    void validate() const {
        require(damping > 0.0 && damping <= 1.0, "damping must lie in (0, 1]");
        require(min_variance > 0.0, "minimum variance must be positive");
        require(confidence > 0.0 && confidence < 1.0, "confidence threshold must lie in (0, 1)");
        require(n_c >= 1 && n_i >= 1, "iteration counts must be positive");
        require(variance_cap_factor > 0.0, "variance cap must be positive");
    }
};

inline DetectorConfig::Exchange parse_exchange(const std::string& name) {
    if (name == "gaussian") return DetectorConfig::Exchange::Gaussian;
    if (name == "projected") return DetectorConfig::Exchange::Projected;
    throw InvalidInput("unknown extrinsic exchange '" + name + "'");
}

struct GaussianMessage {
    Complex mean;
    double var = 0.0;
};

// Observation-to-variable message for element `element` of edge `edge`,
// evaluated straight from the interference sums. mu/eta hold the current
// variable-to-observation messages (edges * D).
inline GaussianMessage observation_update(const ReducedSystem& sys, std::span<const Complex> mu,
                                          std::span<const double> eta, std::size_t edge, std::size_t element,
                                          double min_variance = 0.0) {
    const std::size_t D = sys.D;
    const Complex h = sys.edge_coeff[edge * D + element];
    require(h != Complex(0.0, 0.0), "unconnected element carries no message");
    const std::size_t row = sys.edge_row[edge];
    Complex residual = sys.y[static_cast<Eigen::Index>(row)];
    double var = sys.noise_var;
    for (auto e = sys.row_offsets[row]; e < sys.row_offsets[row + 1]; ++e) {
        for (std::size_t f = 0; f < D; ++f) {
            if (e == edge && f == element) continue;
            const Complex g = sys.edge_coeff[e * D + f];
            if (g == Complex(0.0, 0.0)) continue;
            residual -= g * mu[e * D + f];
            var += std::norm(g) * eta[e * D + f];
        }
    }
    return {residual / h, std::max(var / std::norm(h), min_variance)};
}

struct VariableUpdate {
    std::vector<double> posterior;  // Q probabilities
    CVector mean;                   // E_c
    RVector var;                    // F_c
};

namespace detail {

// Posterior over the Q non-zero codewords from the per-element sums
// A_i = sum 1/D and B_i = sum C/D of the incoming messages, in the log domain.
inline void posterior_from_sums(const CMatrix& alphabet, std::span<const double> log_prior,
                                std::span<const double> precision_sum, std::span<const Complex> weighted_sum,
                                std::span<double> out) {
    const auto Q = static_cast<std::size_t>(alphabet.rows());
    const auto D = static_cast<std::size_t>(alphabet.cols());
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < Q; ++q) {
        double lp = log_prior.empty() ? 0.0 : log_prior[q];
        for (std::size_t i = 0; i < D; ++i) {
            const Complex chi = alphabet(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(i));
            lp -= std::norm(chi) * precision_sum[i] - 2.0 * std::real(std::conj(chi) * weighted_sum[i]);
        }
        out[q] = lp;
        peak = std::max(peak, lp);
    }
    double total = 0.0;
    for (std::size_t q = 0; q < Q; ++q) total += out[q] = std::exp(out[q] - peak);
    for (std::size_t q = 0; q < Q; ++q) out[q] /= total;
}

inline void project(const CMatrix& alphabet, std::span<const double> posterior, double min_variance,
                    std::span<Complex> mean, std::span<double> var) {
    const auto Q = static_cast<std::size_t>(alphabet.rows());
    const auto D = static_cast<std::size_t>(alphabet.cols());
    for (std::size_t i = 0; i < D; ++i) {
        Complex m{0.0, 0.0};
        double second = 0.0;
        for (std::size_t q = 0; q < Q; ++q) {
            const Complex chi = alphabet(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(i));
            m += posterior[q] * chi;
            second += posterior[q] * std::norm(chi);
        }
        mean[i] = m;
        var[i] = std::max(min_variance, second - std::norm(m));
    }
}

}  // namespace detail

// Variable-node update. incoming[i] lists the (C, D) messages reaching
// element i of the block. An empty log_prior means equiprobable codewords.
inline VariableUpdate variable_update(const CMatrix& alphabet, std::span<const double> log_prior,
                                      const std::vector<std::vector<GaussianMessage>>& incoming,
                                      double min_variance) {
    const auto D = static_cast<std::size_t>(alphabet.cols());
    require(incoming.size() == D, "need one message list per codeword element");
    std::vector<double> precision(D, 0.0);
    std::vector<Complex> weighted(D, Complex(0.0, 0.0));
    for (std::size_t i = 0; i < D; ++i) {
        for (const auto& m : incoming[i]) {
            precision[i] += 1.0 / m.var;
            weighted[i] += m.mean / m.var;
        }
    }
    VariableUpdate out;
    out.posterior.resize(static_cast<std::size_t>(alphabet.rows()));
    detail::posterior_from_sums(alphabet, log_prior, precision, weighted, out.posterior);
    out.mean.resize(static_cast<Eigen::Index>(D));
    out.var.resize(static_cast<Eigen::Index>(D));
    detail::project(alphabet, out.posterior, min_variance, {out.mean.data(), D}, {out.var.data(), D});
    return out;
}

// Gaussian division of the projected belief CN(E, F) by the incoming
// message CN(C, D). A vanishing precision difference is treated as an
// uninformative message of variance `cap`; a negative one is returned as a
// negative variance for the damping step to reject.
inline GaussianMessage extrinsic_combine(Complex E, double F, Complex C, double D, double cap) {
    const double precision = 1.0 / F - 1.0 / D;
    if (!std::isfinite(precision) || std::abs(precision) <= 1e-12 / F) return {E, cap};
    const double var = 1.0 / precision;
    if (var > cap) return {E, cap};
    return {var * (E / F - C / D), var};
}

// Precision-domain blend of the new extrinsic message with the previous
// message; keeps the previous message when the result is not a valid variance.
inline GaussianMessage damp(const GaussianMessage& extrinsic, const GaussianMessage& previous, double delta) {
    if (delta == 1.0) return extrinsic.var > 0.0 ? extrinsic : previous;
    const double precision = delta / extrinsic.var + (1.0 - delta) / previous.var;
    const double var = 1.0 / precision;
    if (!(precision > 0.0) || !std::isfinite(var)) return previous;
    const Complex mean = var * (delta * extrinsic.mean / extrinsic.var + (1.0 - delta) * previous.mean / previous.var);
    if (!std::isfinite(mean.real()) || !std::isfinite(mean.imag())) return previous;
    return {mean, var};
}

// Posteriors are stored block-major: posteriors[c * Q + q].
inline double convergence_indicator(std::span<const double> posteriors, std::size_t Q, double confidence) {
    require(Q > 0 && posteriors.size() % Q == 0, "posterior table is not a multiple of Q");
    const std::size_t blocks = posteriors.size() / Q;
    if (blocks == 0) return 1.0;
    std::size_t confident = 0;
    for (std::size_t c = 0; c < blocks; ++c) {
        const auto row = posteriors.subspan(c * Q, Q);
        if (*std::max_element(row.begin(), row.end()) >= 1.0 - confidence) ++confident;
    }
    return static_cast<double>(confident) / static_cast<double>(blocks);
}

struct DetectorResult {
    std::size_t Q = 0;
    std::vector<double> posteriors;                 // blocks * Q
    std::vector<std::size_t> decisions;             // per block
    std::vector<std::vector<std::uint8_t>> bits;    // per user
    std::size_t iterations = 0;
    std::vector<double> convergence_history;
    std::uint64_t exchanged_complex_values = 0;
};

namespace detail {

// Lowest codeword index wins ties.
inline std::vector<std::size_t> hard_decisions(std::span<const double> posteriors, std::size_t Q) {
    std::vector<std::size_t> out(posteriors.size() / Q);
    for (std::size_t c = 0; c < out.size(); ++c) {
        const auto row = posteriors.subspan(c * Q, Q);
        out[c] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

inline void finish(DetectorResult& result, const ReducedSystem& sys, const ScmaCodebook& codebook) {
    result.Q = codebook.size();
    result.decisions = hard_decisions(result.posteriors, result.Q);
    std::vector<std::vector<std::size_t>> per_user(codebook.num_users());
    for (std::size_t c = 0; c < sys.blocks(); ++c) {
        auto& seq = per_user[sys.block_user[c]];
        if (seq.size() <= sys.block_slot[c]) seq.resize(sys.block_slot[c] + 1);
        seq[sys.block_slot[c]] = result.decisions[c];
    }
    result.bits.clear();
    for (const auto& seq : per_user) result.bits.push_back(demap(seq, result.Q));
}

struct GaepRun {
    std::vector<double> posteriors;
    std::vector<double> evidence_precision;  // sum of 1/D per block element
    std::vector<Complex> evidence_weighted;  // sum of C/D
    std::size_t iterations = 0;
    std::vector<double> history;
};

// Flooding-schedule GAEP on one grouped system. log_prior is blocks * Q
// (empty for equiprobable codewords). With Stopping::Best the returned
// posteriors are those of the iteration with the highest convergence
// indicator (latest on ties). The evidence sums are the product of the
// observation messages into each element at that iteration.
// Variable-to-observation messages (edges * D), carried between calls.
struct GaepState {
    std::vector<Complex> mu;
    std::vector<double> eta;
};

enum class Stopping {
    Best,   // keep the most confident iteration, stop once every block is confident
    Fixed,  // run every iteration and keep the last
};

inline GaepRun run_gaep(const ReducedSystem& sys, const ScmaCodebook& codebook, std::span<const double> log_prior,
                        const DetectorConfig& cfg, std::size_t max_iterations, Stopping stopping = Stopping::Best,
                        GaepState* state = nullptr) {
    const std::size_t D = sys.D;
    const std::size_t Q = codebook.size();
    const std::size_t C = sys.blocks();
    const std::size_t E = sys.edges();
    const double eps = cfg.min_variance;
    const double cap = cfg.variance_cap_factor * codebook.mean_element_energy();

    std::vector<double> current(C * Q);
    std::vector<Complex> block_mean(C * D);
    std::vector<double> block_var(C * D);
    const auto prior_of = [&](std::size_t c) {
        return log_prior.empty() ? std::span<const double>{} : log_prior.subspan(c * Q, Q);
    };

    // Initial variable-to-observation messages: projection of the prior.
    std::vector<Complex> mu(E * D);
    std::vector<double> eta(E * D);
    {
        const std::vector<double> zero_precision(D, 0.0);
        const std::vector<Complex> zero_weighted(D, Complex(0.0, 0.0));
        for (std::size_t c = 0; c < C; ++c) {
            const auto& alphabet = codebook.nonzero_alphabet(sys.block_user[c]);
            std::span<double> post(current.data() + c * Q, Q);
            posterior_from_sums(alphabet, prior_of(c), zero_precision, zero_weighted, post);
            project(alphabet, post, eps, {block_mean.data() + c * D, D}, {block_var.data() + c * D, D});
        }
        for (std::size_t e = 0; e < E; ++e) {
            const auto c = sys.edge_block[e];
            for (std::size_t i = 0; i < D; ++i) {
                mu[e * D + i] = block_mean[c * D + i];
                eta[e * D + i] = block_var[c * D + i];
            }
        }
    }
    if (state && state->mu.size() == E * D && state->eta.size() == E * D) {
        mu = state->mu;
        eta = state->eta;
    }

    std::vector<Complex> msg_mean(E * D);
    std::vector<double> msg_var(E * D);
    std::vector<double> precision_sum(D);
    std::vector<Complex> weighted_sum(D);

    GaepRun run;
    run.posteriors = current;
    run.evidence_precision.assign(C * D, 0.0);
    run.evidence_weighted.assign(C * D, Complex(0.0, 0.0));
    std::vector<double> ev_prec(C * D, 0.0);
    std::vector<Complex> ev_w(C * D);
    double best = -1.0;
    for (std::size_t iter = 1; iter <= max_iterations; ++iter) {
        // Observation nodes.
        for (std::size_t d = 0; d < sys.rows(); ++d) {
            Complex total_mean = sys.y[static_cast<Eigen::Index>(d)];
            double total_var = sys.noise_var;
            for (auto e = sys.row_offsets[d]; e < sys.row_offsets[d + 1]; ++e) {
                for (std::size_t i = 0; i < D; ++i) {
                    const Complex h = sys.edge_coeff[e * D + i];
                    total_mean -= h * mu[e * D + i];
                    total_var += std::norm(h) * eta[e * D + i];
                }
            }
            for (auto e = sys.row_offsets[d]; e < sys.row_offsets[d + 1]; ++e) {
                for (std::size_t i = 0; i < D; ++i) {
                    const Complex h = sys.edge_coeff[e * D + i];
                    if (h == Complex(0.0, 0.0)) continue;
                    const double gain = std::norm(h);
                    msg_mean[e * D + i] = (total_mean + h * mu[e * D + i]) / h;
                    msg_var[e * D + i] = std::max(eps, (total_var - gain * eta[e * D + i]) / gain);
                }
            }
        }

        // Variable nodes: posterior, projection, extrinsic and damping.
        for (std::size_t c = 0; c < C; ++c) {
            std::fill(precision_sum.begin(), precision_sum.end(), 0.0);
            std::fill(weighted_sum.begin(), weighted_sum.end(), Complex(0.0, 0.0));
            for (auto k = sys.block_offsets[c]; k < sys.block_offsets[c + 1]; ++k) {
                const auto e = sys.block_edges[k];
                for (std::size_t i = 0; i < D; ++i) {
                    if (sys.edge_coeff[e * D + i] == Complex(0.0, 0.0)) continue;
                    precision_sum[i] += 1.0 / msg_var[e * D + i];
                    weighted_sum[i] += msg_mean[e * D + i] / msg_var[e * D + i];
                }
            }
            for (std::size_t i = 0; i < D; ++i) {
                ev_prec[c * D + i] = precision_sum[i];
                ev_w[c * D + i] = weighted_sum[i];
            }
            const auto& alphabet = codebook.nonzero_alphabet(sys.block_user[c]);
            std::span<double> post(current.data() + c * Q, Q);
            posterior_from_sums(alphabet, prior_of(c), precision_sum, weighted_sum, post);
            project(alphabet, post, eps, {block_mean.data() + c * D, D}, {block_var.data() + c * D, D});

            for (auto k = sys.block_offsets[c]; k < sys.block_offsets[c + 1]; ++k) {
                const auto e = sys.block_edges[k];
                for (std::size_t i = 0; i < D; ++i) {
                    const std::size_t idx = e * D + i;
                    if (sys.edge_coeff[idx] == Complex(0.0, 0.0)) continue;
                    const auto ext = extrinsic_combine(block_mean[c * D + i], block_var[c * D + i], msg_mean[idx],
                                                       msg_var[idx], cap);
                    const auto next = damp(ext, {mu[idx], eta[idx]}, cfg.damping);
                    mu[idx] = next.mean;
                    eta[idx] = std::clamp(next.var, eps, cap);
                }
            }
        }

        const double delta = convergence_indicator(current, Q, cfg.confidence);
        run.history.push_back(delta);
        run.iterations = iter;
        if (stopping == Stopping::Fixed) {
            run.posteriors = current;
            run.evidence_precision = ev_prec;
            run.evidence_weighted = ev_w;
            continue;
        }
        if (delta >= best) {
            best = delta;
            run.posteriors = current;
            run.evidence_precision = ev_prec;
            run.evidence_weighted = ev_w;
        }
        if (delta >= 1.0) break;
    }
    if (state) {
        state->mu = std::move(mu);
        state->eta = std::move(eta);
    }
    return run;
}

}  // namespace detail

// Centralized GAEP over the stacked system of all receive branches.
inline DetectorResult gaep_centralized(const ReducedSystem& system, const ScmaCodebook& codebook,
                                       const DetectorConfig& cfg) {
    cfg.validate();
    auto run = detail::run_gaep(system, codebook, {}, cfg, cfg.n_c);
    DetectorResult result;
    result.posteriors = std::move(run.posteriors);
    result.iterations = run.iterations;
    result.convergence_history = std::move(run.history);
    detail::finish(result, system, codebook);
    return result;
}

struct DecentralizedResult {
    std::vector<DetectorResult> per_rrh;
    std::uint64_t exchanged_complex_values = 0;
    std::size_t outer_rounds = 0;
};

// Decentralized GAEP: every RRH runs exactly n_i local iterations with a prior
// built from its peer's extrinsic Gaussians, then both exchange their own
// extrinsic means and variances. Both RRHs work from the previous exchange, so
// the per-round updates are independent of execution order. Every round starts
// the local message passing afresh from the prior.
inline DecentralizedResult gaep_decentralized(std::span<const ReducedSystem> systems, const ScmaCodebook& codebook,
                                              const DetectorConfig& cfg) {
    cfg.validate();
    require(systems.size() == 2, "decentralized detection needs exactly two RRHs");
    require(systems[0].block_user == systems[1].block_user, "RRHs disagree on the block layout");
    const std::size_t C = systems[0].blocks();
    const std::size_t D = systems[0].D;
    const std::size_t Q = codebook.size();
    const double cap = cfg.variance_cap_factor * codebook.mean_element_energy();

    struct Extrinsic {
        std::vector<Complex> mean;
        std::vector<double> var;
    };
    std::array<std::optional<Extrinsic>, 2> from_peer;
    std::array<detail::GaepState, 2> local;

    DecentralizedResult out;
    out.per_rrh.resize(2);
    // n_o = 0 still runs one local pass so every RRH has a decision; nothing is exchanged
    const std::size_t rounds = std::max<std::size_t>(cfg.n_o, 1);
    for (std::size_t round = 0; round < rounds; ++round) {
        std::array<Extrinsic, 2> produced;
        for (std::size_t u = 0; u < 2; ++u) {
            const auto& sys = systems[u];
            std::vector<double> log_prior;
            if (from_peer[u]) {
                log_prior.assign(C * Q, 0.0);
                for (std::size_t c = 0; c < C; ++c) {
                    const auto& alphabet = codebook.nonzero_alphabet(sys.block_user[c]);
                    for (std::size_t q = 0; q < Q; ++q) {
                        double lp = 0.0;
                        for (std::size_t i = 0; i < D; ++i) {
                            lp -= std::norm(alphabet(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(i)) -
                                            from_peer[u]->mean[c * D + i]) /
                                  from_peer[u]->var[c * D + i];
                        }
                        log_prior[c * Q + q] = lp;
                    }
                }
            }
            auto run = detail::run_gaep(sys, codebook, log_prior, cfg, cfg.n_i, detail::Stopping::Fixed,
                                        cfg.warm_start ? &local[u] : nullptr);

            Extrinsic ext{std::vector<Complex>(C * D), std::vector<double>(C * D)};
            std::vector<Complex> mean(D);
            std::vector<double> var(D);
            for (std::size_t c = 0; c < C; ++c) {
                detail::project(codebook.nonzero_alphabet(sys.block_user[c]), {run.posteriors.data() + c * Q, Q},
                                cfg.min_variance, mean, var);
                for (std::size_t i = 0; i < D; ++i) {
                    const std::size_t k = c * D + i;
                    GaussianMessage m{mean[i], var[i]};
                    if (cfg.exchange == DetectorConfig::Exchange::Gaussian) {
                        // Gaussian posterior divided by the peer prior leaves the local observation messages
                        const double precision = run.evidence_precision[k];
                        m = precision > 1.0 / cap ? GaussianMessage{run.evidence_weighted[k] / precision, 1.0 / precision}
                                                  : GaussianMessage{mean[i], cap};
                    } else if (from_peer[u]) {
                        m = extrinsic_combine(mean[i], var[i], from_peer[u]->mean[k], from_peer[u]->var[k], cap);
                        if (!(m.var > 0.0)) m = {mean[i], cap};
                    }
                    ext.mean[k] = m.mean;
                    ext.var[k] = m.var;
                }
            }
            produced[u] = std::move(ext);

            auto& result = out.per_rrh[u];
            result.posteriors = std::move(run.posteriors);
            result.iterations += run.iterations;
            result.convergence_history.insert(result.convergence_history.end(), run.history.begin(),
                                              run.history.end());
        }
        if (round >= cfg.n_o) break;
        from_peer[0] = std::move(produced[1]);
        from_peer[1] = std::move(produced[0]);
        out.exchanged_complex_values += 2 * static_cast<std::uint64_t>(C * D);
        ++out.outer_rounds;
    }
    for (std::size_t u = 0; u < 2; ++u) {
        out.per_rrh[u].exchanged_complex_values = out.exchanged_complex_values;
        detail::finish(out.per_rrh[u], systems[u], codebook);
    }
    return out;
}

inline constexpr std::uint64_t kMaxMlHypotheses = 1ULL << 20;

struct MlDecision {
    std::vector<std::size_t> indices;
    double metric = 0.0;
};

// Exhaustive single-user ML over all Q^(MN/K) codeword sequences:
// minimizes sum_u ||y_u - sqrt(P) H_u vec(X)||^2.
inline MlDecision ml_detect_single_user(std::span<const CVector> y, std::span<const DelayDopplerMatrix> H,
                                        double sqrt_power, const ScmaCodebook& codebook, std::size_t user,
                                        const OtfsGrid& grid, AllocationAxis axis) {
    require(!y.empty() && y.size() == H.size(), "need one matrix per observation branch");
    require(user < codebook.num_users(), "user index out of range");
    const std::size_t K = codebook.num_resources();
    const std::size_t Q = codebook.size();
    const std::size_t slots = codewords_per_frame(grid, K);
    std::uint64_t hypotheses = 1;
    for (std::size_t t = 0; t < slots; ++t) {
        if (hypotheses > kMaxMlHypotheses / Q) {
            throw EnumerationTooLarge("single-user ML needs more than 2^20 hypotheses");
        }
        hypotheses *= Q;
    }

    const auto rows = static_cast<Eigen::Index>(grid.size());
    const auto branches = static_cast<Eigen::Index>(y.size());
    CVector observed(rows * branches);
    for (Eigen::Index b = 0; b < branches; ++b) observed.segment(b * rows, rows) = y[static_cast<std::size_t>(b)];

    // Response of every (slot, codeword) pair across all branches.
    std::vector<CVector> response(slots * Q);
    for (std::size_t t = 0; t < slots; ++t) {
        const auto positions = slot_positions(t, grid, K, axis);
        for (std::size_t q = 0; q < Q; ++q) {
            CVector x = CVector::Zero(rows);
            const auto& cw = codebook.codeword(user, q);
            for (auto k : codebook.support(user)) x[static_cast<Eigen::Index>(positions[k])] = cw[static_cast<Eigen::Index>(k)];
            CVector r(rows * branches);
            for (Eigen::Index b = 0; b < branches; ++b) r.segment(b * rows, rows) = sqrt_power * (H[static_cast<std::size_t>(b)] * x);
            response[t * Q + q] = std::move(r);
        }
    }

    MlDecision best{std::vector<std::size_t>(slots, 0), std::numeric_limits<double>::infinity()};
    std::vector<std::size_t> digits(slots, 0);
    for (std::uint64_t h = 0; h < hypotheses; ++h) {
        std::uint64_t v = h;
        for (std::size_t t = slots; t-- > 0;) {
            digits[t] = static_cast<std::size_t>(v % Q);
            v /= Q;
        }
        CVector residual = observed;
        for (std::size_t t = 0; t < slots; ++t) residual -= response[t * Q + digits[t]];
        const double metric = residual.squaredNorm();
        if (metric < best.metric) best = {digits, metric};
    }
    return best;
}

// Dimensions behind the complexity and fronthaul accounting.
struct OverheadDims {
    std::size_t M = 64, N = 16, J = 6, K = 4, D = 2, Q = 4;
    std::size_t antennas[2] = {1, 1};  // N_u
    std::size_t paths[2] = {24, 24};   // L_u = sum_j L_uj
    std::size_t edges = 0;             // S: non-zero row-blocks of the stacked H
    std::size_t n_c = 20, n_i = 3, n_o = 5;
};

struct OverheadReport {
    std::uint64_t complex_values_exchanged = 0;
    double complexity = 0.0;  // operation count inside the O(.) of the detector
};

inline OverheadReport overhead_report(DetectorKind kind, const OverheadDims& d) {
    const std::uint64_t per_frame = static_cast<std::uint64_t>(d.M) * d.N * d.J * d.D / d.K;
    const double S = static_cast<double>(d.edges);
    const double core = 6.0 * S * static_cast<double>(d.D) + S * static_cast<double>(d.D * d.Q);
    OverheadReport r;
    switch (kind) {
        case DetectorKind::Centralized:
            r.complex_values_exchanged = static_cast<std::uint64_t>(d.M) * d.N * (d.antennas[0] + d.antennas[1]) +
                                         3 * (d.antennas[0] * d.paths[0] + d.antennas[1] * d.paths[1]) + 2 * per_frame;
            r.complexity = static_cast<double>(d.n_c) * (core + 2.0 * static_cast<double>(per_frame * d.Q));
            break;
        case DetectorKind::Decentralized:
            r.complex_values_exchanged = 2 * per_frame * d.n_o;
            r.complexity = static_cast<double>(d.n_o * d.n_i) * (core + 4.0 * static_cast<double>(per_frame * d.Q));
            break;
        case DetectorKind::MaximumLikelihood:
            r.complex_values_exchanged = static_cast<std::uint64_t>(d.M) * d.N * (d.antennas[0] + d.antennas[1]) +
                                         3 * (d.antennas[0] * d.paths[0] + d.antennas[1] * d.paths[1]);
            r.complexity = std::pow(static_cast<double>(d.Q), static_cast<double>(d.M * d.N * d.J / d.K));
            break;
    }
    return r;
}

}  // namespace obscma
