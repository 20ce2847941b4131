#include <gtest/gtest.h>

#include <cmath>

#include "capfuse/linalg.hpp"
#include "capfuse/rng.hpp"
#include "support/oracles.hpp"

using namespace capfuse;

namespace {

Vec random_vec(Rng& rng, std::size_t d) {
    std::vector<double> xs(d);
    for (double& x : xs) x = rng.normal();
    return Vec(std::move(xs));
}

} // namespace

TEST(Linalg, NormalizeThreeFourFive) {
    const auto u = l2_normalize(Vec{3.0, 4.0});
    EXPECT_NEAR(u[0], 0.6, 1e-15);
    EXPECT_NEAR(u[1], 0.8, 1e-15);
}

TEST(Linalg, NormalizeIsIdempotent) {
    const auto u = l2_normalize(Vec{0.6, 0.8});
    const auto again = l2_normalize(u.vec());
    for (std::size_t i = 0; i < u.dim(); ++i) EXPECT_NEAR(again[i], u[i], 1e-15);
}

TEST(Linalg, NormalizeZeroVectorFails) {
    try {
        l2_normalize(Vec{0.0, 0.0});
        FAIL() << "expected ZeroNorm";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::ZeroNorm);
    }
}

TEST(Linalg, VecRejectsEmptyAndNonFinite) {
    EXPECT_THROW(Vec(std::vector<double>{}), Error);
    EXPECT_THROW((Vec{1.0, std::nan("")}), Error);
}

TEST(Linalg, CosineSelfAndOrthogonal) {
    const std::vector<Vec> u{l2_normalize(Vec{1.0, 2.0, 2.0}).vec()};
    EXPECT_NEAR(cosine_sim_matrix(u, u)(0, 0), 1.0, 1e-15);
    const std::vector<Vec> a{Vec{1.0, 0.0}}, b{Vec{0.0, 1.0}};
    EXPECT_EQ(cosine_sim_matrix(a, b)(0, 0), 0.0);
}

TEST(Linalg, CosineMatchesNaiveLoops) {
    Rng rng(7);
    std::vector<Vec> a, b;
    oracle::Rows ra, rb;
    for (int i = 0; i < 5; ++i) {
        a.push_back(random_vec(rng, 6));
        ra.emplace_back(a.back().values().begin(), a.back().values().end());
    }
    for (int j = 0; j < 7; ++j) {
        b.push_back(random_vec(rng, 6));
        rb.emplace_back(b.back().values().begin(), b.back().values().end());
    }
    const auto s = cosine_sim_matrix(a, b);
    const auto ref = oracle::naive_similarity(ra, rb);
    ASSERT_EQ(s.rows(), 5u);
    ASSERT_EQ(s.cols(), 7u);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 7; ++j) EXPECT_NEAR(s(i, j), ref[i][j], 1e-6);
}

TEST(Linalg, CosineErrors) {
    const std::vector<Vec> a{Vec{1.0, 0.0}}, b{Vec{1.0, 0.0, 0.0}}, z{Vec{0.0, 0.0}};
    EXPECT_THROW(cosine_sim_matrix(a, b), Error);
    EXPECT_THROW(cosine_sim_matrix(a, z), Error);
}

TEST(Linalg, MeanRenormalizeExamples) {
    const auto u = l2_normalize(Vec{1.0, 1.0, 0.0});
    const std::vector<UnitVec> dup{u, u};
    const auto m = mean_renormalize(dup);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(m[i], u[i], 1e-15);

    const std::vector<UnitVec> axes{l2_normalize(Vec{1.0, 0.0}), l2_normalize(Vec{0.0, 1.0})};
    const auto bis = mean_renormalize(axes);
    EXPECT_NEAR(bis[0], std::sqrt(2.0) / 2.0, 1e-15);
    EXPECT_NEAR(bis[1], std::sqrt(2.0) / 2.0, 1e-15);

    const std::vector<UnitVec> opposite{l2_normalize(Vec{1.0, 0.0}), l2_normalize(Vec{-1.0, 0.0})};
    try {
        mean_renormalize(opposite);
        FAIL() << "expected DegenerateMean";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::DegenerateMean);
    }
}

// Property checks over random inputs.

TEST(LinalgProperty, NormalizeScaleInvariant) {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const Vec v = random_vec(rng, 1 + rng.uniform_index(16));
        const double c = std::exp(4.0 * rng.normal());
        std::vector<double> scaled(v.values().begin(), v.values().end());
        for (double& x : scaled) x *= c;
        const auto a = l2_normalize(v);
        const auto b = l2_normalize(Vec(scaled));
        for (std::size_t i = 0; i < v.dim(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
        EXPECT_NEAR(a.vec().norm(), 1.0, 1e-6);
    }
}

TEST(LinalgProperty, CosineTransposeSymmetry) {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t d = 1 + rng.uniform_index(10);
        std::vector<Vec> a, b;
        for (std::size_t i = 0; i < 1 + rng.uniform_index(6); ++i) a.push_back(random_vec(rng, d));
        for (std::size_t i = 0; i < 1 + rng.uniform_index(6); ++i) b.push_back(random_vec(rng, d));
        const auto ab = cosine_sim_matrix(a, b);
        const auto ba = cosine_sim_matrix(b, a);
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = 0; j < b.size(); ++j) {
                EXPECT_NEAR(ab(i, j), ba(j, i), 1e-6);
                EXPECT_TRUE(std::isfinite(ab(i, j)));
                EXPECT_LE(std::abs(ab(i, j)), 1.0 + 1e-6);
            }
    }
}

TEST(LinalgProperty, MeanRenormalizePermutationInvariant) {
    Rng rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = 2 + rng.uniform_index(8);
        std::vector<UnitVec> vs;
        for (std::size_t i = 0; i < 1 + rng.uniform_index(7); ++i) vs.push_back(l2_normalize(random_vec(rng, d)));
        const auto ref = mean_renormalize(vs);
        rng.shuffle(vs);
        const auto perm = mean_renormalize(vs);
        EXPECT_EQ(ref, perm);
    }
}
