#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ledit/ops.hpp"
#include "ledit/rng.hpp"

using namespace ledit;

TEST_CASE("softmax_rows: spec examples") {
    SECTION("all-zero row is uniform") {
        Tensor m({1, 3});
        Tensor p = softmax_rows(m);
        for (int j = 0; j < 3; ++j) CHECK(p[j] == Catch::Approx(1.0 / 3).epsilon(1e-15));
    }
    SECTION("dominant logit saturates without overflow") {
        Tensor m({1, 3}, {1000.0, 0.0, 0.0});
        Tensor p = softmax_rows(m);
        CHECK(p[0] == Catch::Approx(1.0).epsilon(1e-15));
        CHECK(p[1] == 0.0);
        CHECK(p[2] == 0.0);
    }
    SECTION("row (1,2,3) against the scripted exp/normalize oracle") {
        Tensor m({1, 3}, {1.0, 2.0, 3.0});
        Tensor p = softmax_rows(m);
        // frozen from exp(k)/sum(exp(1..3)) evaluated at 64-bit
        CHECK(p[0] == Catch::Approx(0.09003057317038046).epsilon(1e-12));
        CHECK(p[1] == Catch::Approx(0.24472847105479767).epsilon(1e-12));
        CHECK(p[2] == Catch::Approx(0.6652409557748219).epsilon(1e-12));
        // and against the oracle computed in place
        const double e1 = std::exp(1.0 - 3.0), e2 = std::exp(2.0 - 3.0), e3 = 1.0;
        const double s = e1 + e2 + e3;
        CHECK(p[0] == Catch::Approx(e1 / s).epsilon(1e-14));
        CHECK(p[1] == Catch::Approx(e2 / s).epsilon(1e-14));
        CHECK(p[2] == Catch::Approx(e3 / s).epsilon(1e-14));
    }
    SECTION("errors") {
        CHECK_THROWS_AS(softmax_rows(Tensor({3})), ShapeError);
        Tensor bad({1, 2}, {1.0, std::nan("")});
        CHECK_THROWS_AS(softmax_rows(bad), InputError);
    }
}

TEST_CASE("softmax_rows: rows sum to 1 within 1e-12 (property)") {
    RngStream rng(2024);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 1 + rng.uniform_int(6), c = 1 + rng.uniform_int(9);
        Tensor m({n, c});
        for (std::size_t i = 0; i < m.numel(); ++i) m[i] = 40.0 * (rng.uniform() - 0.5);
        Tensor p = softmax_rows(m);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                s += p.at2(i, j);
                CHECK(p.at2(i, j) >= 0.0);
                CHECK(p.at2(i, j) <= 1.0);
            }
            CHECK(std::fabs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("attention: spec examples") {
    SECTION("single key: map is [[1]] and out equals v") {
        Tensor q({1, 2}, {0.3, -0.7});
        Tensor k({1, 2}, {2.0, 5.0});
        Tensor v({1, 3}, {9.0, -1.0, 4.0});
        auto r = attention(q, k, v);
        CHECK(r.map[0] == 1.0);
        for (int j = 0; j < 3; ++j) CHECK(r.out[j] == v[j]);
    }
    SECTION("orthogonal q gives the column mean of v") {
        Tensor q({1, 2});
        Tensor k({3, 2}, {1, 0, 0, 1, -1, 0});
        Tensor v({3, 2}, {3, 0, 0, 3, 6, 3});
        auto r = attention(q, k, v);
        CHECK(r.out[0] == Catch::Approx(3.0).epsilon(1e-14));
        CHECK(r.out[1] == Catch::Approx(2.0).epsilon(1e-14));
    }
    SECTION("random case against the brute-force double loop") {
        RngStream rng(5);
        Tensor q = rng.gaussian_tensor({2, 2});
        Tensor k = rng.gaussian_tensor({3, 2});
        Tensor v = rng.gaussian_tensor({3, 4});
        auto r = attention(q, k, v);
        // oracle: explicit softmax over j then sum_j p_ij v_j
        for (std::size_t i = 0; i < 2; ++i) {
            double w[3], mx = -1e300, s = 0.0;
            for (std::size_t j = 0; j < 3; ++j) {
                w[j] = (q.at2(i, 0) * k.at2(j, 0) + q.at2(i, 1) * k.at2(j, 1)) / std::sqrt(2.0);
                mx = std::max(mx, w[j]);
            }
            for (std::size_t j = 0; j < 3; ++j) {
                w[j] = std::exp(w[j] - mx);
                s += w[j];
            }
            for (std::size_t d = 0; d < 4; ++d) {
                double o = 0.0;
                for (std::size_t j = 0; j < 3; ++j) o += (w[j] / s) * v.at2(j, d);
                CHECK(r.out.at2(i, d) == Catch::Approx(o).margin(1e-12));
            }
        }
    }
    SECTION("mismatched embedding dims") {
        CHECK_THROWS_AS(attention(Tensor({1, 2}), Tensor({1, 3}), Tensor({1, 1})), ShapeError);
    }
}

TEST_CASE("attention reproduces the explicit sum for all small shapes (property)") {
    RngStream rng(77);
    for (int rep = 0; rep < 30; ++rep) {
        const std::size_t n = 1 + rng.uniform_int(8), m = 1 + rng.uniform_int(8);
        const std::size_t d = 1 + rng.uniform_int(5), dv = 1 + rng.uniform_int(5);
        Tensor q = rng.gaussian_tensor({n, d});
        Tensor k = rng.gaussian_tensor({m, d});
        Tensor v = rng.gaussian_tensor({m, dv});
        auto r = attention(q, k, v);
        for (std::size_t i = 0; i < n; ++i) {
            double rowsum = 0.0;
            for (std::size_t j = 0; j < m; ++j) rowsum += r.map.at2(i, j);
            CHECK(std::fabs(rowsum - 1.0) <= 1e-12);
            for (std::size_t c = 0; c < dv; ++c) {
                double o = 0.0;
                for (std::size_t j = 0; j < m; ++j) o += r.map.at2(i, j) * v.at2(j, c);
                CHECK(r.out.at2(i, c) == Catch::Approx(o).margin(1e-12));
            }
        }
    }
}

TEST_CASE("matmul agrees with a naive triple loop") {
    RngStream rng(11);
    Tensor a = rng.gaussian_tensor({4, 5});
    Tensor b = rng.gaussian_tensor({5, 3});
    Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 5; ++k) s += a.at2(i, k) * b.at2(k, j);
            CHECK(c.at2(i, j) == Catch::Approx(s).margin(1e-13));
        }
    CHECK_THROWS_AS(matmul(a, Tensor({4, 2})), ShapeError);
}

TEST_CASE("pool and upsample invert on constant grids") {
    RngStream rng(3);
    Tensor g = rng.gaussian_tensor({16, 3}); // 4x4 grid, 3 channels
    Tensor down = avg_pool_2x2(g, 4, 4);
    REQUIRE(down.rows() == 4);
    Tensor up = upsample_2x2(down, 2, 2);
    REQUIRE(up.rows() == 16);
    // pooling a nearest-upsampled grid gives back the coarse grid exactly
    Tensor down2 = avg_pool_2x2(up, 4, 4);
    for (std::size_t i = 0; i < down.numel(); ++i)
        CHECK(down2[i] == Catch::Approx(down[i]).margin(1e-15));
}
