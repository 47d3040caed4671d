#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace obscma;

namespace {

CMatrix random_frame(Eigen::Index M, Eigen::Index N, std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    CMatrix X(M, N);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = {n(rng), n(rng)};
    return X;
}

}  // namespace

TEST(Modem, IsfftMatchesDenseDft) {
    std::mt19937_64 rng(1);
    for (auto [M, N] : {std::pair{4, 2}, std::pair{16, 8}, std::pair{6, 5}}) {
        const auto X = random_frame(M, N, rng);
        EXPECT_LT((isfft(X) - oracle::isfft(X)).norm(), 1e-12 * X.norm());
        EXPECT_LT((sfft(X) - oracle::sfft(X)).norm(), 1e-12 * X.norm());
    }
}

TEST(Modem, TrivialTransforms) {
    CMatrix one(1, 1);
    one(0, 0) = {0.3, -2.0};
    EXPECT_EQ(isfft(one), one);
    EXPECT_EQ(sfft(one), one);
    const CMatrix zero = CMatrix::Zero(4, 2);
    EXPECT_EQ(isfft(zero).norm(), 0.0);
}

TEST(Modem, UnitaryRoundTrip) {
    std::mt19937_64 rng(2);
    const auto X = random_frame(4, 2, rng);
    EXPECT_LT((sfft(isfft(X)) - X).norm(), 1e-12);
    EXPECT_NEAR(isfft(X).squaredNorm(), X.squaredNorm(), 1e-12 * X.squaredNorm());
}

TEST(Modem, HeisenbergImpulse) {
    const OtfsGrid grid{4, 2, 15e3, 0};
    CMatrix tf = CMatrix::Zero(4, 2);
    tf(0, 0) = 1.0;
    const auto s = heisenberg(tf, grid);
    for (Eigen::Index c = 0; c < 4; ++c) EXPECT_NEAR(std::abs(s.samples[c] - Complex(0.5, 0.0)), 0.0, 1e-15);
    for (Eigen::Index c = 4; c < 8; ++c) EXPECT_EQ(s.samples[c], Complex(0.0, 0.0));
}

TEST(Modem, HeisenbergWignerMatchExplicitSums) {
    std::mt19937_64 rng(3);
    const OtfsGrid grid{8, 4, 15e3, 0};
    const auto tf = random_frame(8, 4, rng);
    const auto s = heisenberg(tf, grid);
    EXPECT_LT((s.samples - oracle::heisenberg(tf)).norm(), 1e-12 * tf.norm());
    EXPECT_NEAR(s.samples.squaredNorm(), tf.squaredNorm(), 1e-12 * tf.squaredNorm());
    EXPECT_LT((wigner(s, grid) - oracle::wigner(s.samples, 8, 4)).norm(), 1e-12 * tf.norm());
    EXPECT_LT((wigner(s, grid) - tf).norm(), 1e-12 * tf.norm());
}

TEST(Modem, WignerOfImpulse) {
    const OtfsGrid grid{4, 2, 15e3, 0};
    TimeDomainSignal r;
    r.samples = CVector::Zero(8);
    r.samples[0] = 1.0;
    const auto Y = wigner(r, grid);
    for (Eigen::Index m = 0; m < 4; ++m) EXPECT_NEAR(std::abs(Y(m, 0) - Y(0, 0)), 0.0, 1e-15);
    EXPECT_NEAR(Y.col(1).norm(), 0.0, 1e-15);
}

TEST(Modem, CyclicPrefix) {
    TimeDomainSignal s;
    s.samples.resize(8);
    for (int i = 0; i < 8; ++i) s.samples[i] = Complex(i, -i);
    const auto with = add_cp(s, 2);
    ASSERT_EQ(with.samples.size(), 10);
    EXPECT_EQ(with.samples[0], s.samples[6]);
    EXPECT_EQ(with.samples[1], s.samples[7]);
    EXPECT_EQ(remove_cp(with).samples, s.samples);
    EXPECT_EQ(add_cp(s, 0).samples, s.samples);
    EXPECT_THROW(add_cp(s, 9), InvalidInput);
    EXPECT_THROW(add_cp(with, 1), InvalidInput);
}

TEST(Modem, Loopback) {
    std::mt19937_64 rng(4);
    for (std::size_t cp : {0u, 3u, 16u}) {
        const OtfsGrid grid{64, 16, 15e3, cp};
        const auto X = random_frame(64, 16, rng);
        const auto s = modulate(X, grid);
        EXPECT_EQ(static_cast<std::size_t>(s.samples.size()), grid.size() + cp);
        EXPECT_LT((demodulate(s, grid) - X).cwiseAbs().maxCoeff(), 1e-10);
    }
    const OtfsGrid small{4, 2, 15e3, 1};
    EXPECT_EQ(demodulate(modulate(CMatrix::Zero(4, 2), small), small).norm(), 0.0);
    EXPECT_THROW(modulate(CMatrix::Zero(4, 3), small), InvalidInput);
}
