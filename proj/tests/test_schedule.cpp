#include <catch2/catch_amalgamated.hpp>

#include "ledit/rng.hpp"
#include "ledit/schedule.hpp"

using namespace ledit;

TEST_CASE("make_schedule: construction and invariants") {
    SECTION("the 50-step rescaled schedule is valid") {
        NoiseSchedule s = make_schedule_rescaled(50); // beta in [1e-4, 2e-2] * (1000/50)
        CHECK(s.steps == 50);
        CHECK(s.alpha_bar[0] == 1.0);
        for (int t = 1; t <= 50; ++t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
        CHECK(s.alpha_bar[50] <= 1e-2);
    }
    SECTION("two-step product matches the hand oracle") {
        const double b1 = 0.9, b2 = 0.9 + 1e-6;
        NoiseSchedule s = make_schedule(2, b1, b2);
        CHECK(s.alpha_bar[1] == Catch::Approx(1.0 - b1).epsilon(1e-15));
        CHECK(s.alpha_bar[2] == Catch::Approx((1.0 - b1) * (1.0 - b2)).epsilon(1e-15));
    }
    SECTION("alpha_bar[0] is exactly one") {
        CHECK(make_schedule_rescaled(100).alpha_bar[0] == 1.0);
    }
    SECTION("parameter range violations") {
        CHECK_THROWS_AS(make_schedule(1, 0.1, 0.2), ConfigError);
        CHECK_THROWS_AS(make_schedule(10, 0.0, 0.2), ConfigError);
        CHECK_THROWS_AS(make_schedule(10, 0.3, 0.2), ConfigError);
        CHECK_THROWS_AS(make_schedule(10, 0.3, 1.0), ConfigError);
        // betas too small to reach the terminal noise level
        CHECK_THROWS_AS(make_schedule(10, 1e-5, 1e-4), ConfigError);
    }
}

TEST_CASE("subsample_schedule keeps endpoints and model-step ids") {
    NoiseSchedule base = make_schedule_rescaled(100);
    for (int T : {10, 25, 50, 100}) {
        NoiseSchedule s = subsample_schedule(base, T);
        CHECK(s.steps == T);
        CHECK(s.alpha_bar[0] == 1.0);
        CHECK(s.alpha_bar[T] == base.alpha_bar[100]);
        CHECK(s.model_step[T] == 100);
        CHECK(s.model_step[0] == 0);
    }
    CHECK_THROWS_AS(subsample_schedule(base, 33), ConfigError);
}

TEST_CASE("forward_diffuse endpoints and closed form") {
    NoiseSchedule s = make_schedule_rescaled(50);
    RngStream rng(8);
    Tensor x0 = rng.gaussian_tensor({2, 2});
    Tensor eps = rng.gaussian_tensor({2, 2});

    SECTION("t=0 returns x0 exactly") {
        Tensor out = forward_diffuse(x0, 0, eps, s);
        for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == x0[i]);
    }
    SECTION("scalar closed form at alpha_bar = 0.25") {
        NoiseSchedule toy;
        toy.steps = 1;
        toy.alpha_bar = {1.0, 0.25};
        toy.model_step = {0, 1};
        Tensor one = Tensor::full({1}, 1.0);
        Tensor two = Tensor::full({1}, 2.0);
        Tensor out = forward_diffuse(one, 1, two, toy);
        CHECK(out[0] == Catch::Approx(0.5 + std::sqrt(0.75) * 2.0).epsilon(1e-15));
    }
    SECTION("terminal step is nearly pure noise") {
        Tensor out = forward_diffuse(x0, 50, eps, s);
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(out[i] == Catch::Approx(eps[i]).margin(0.2 * std::fabs(x0[i]) + 1e-3));
    }
    SECTION("shape and range errors") {
        CHECK_THROWS_AS(forward_diffuse(x0, 51, eps, s), StepError);
        CHECK_THROWS_AS(forward_diffuse(x0, 1, Tensor({3}), s), ShapeError);
    }
}

TEST_CASE("cfg_combine identities and affinity in w") {
    RngStream rng(9);
    Tensor ec = rng.gaussian_tensor({3, 3});
    Tensor en = rng.gaussian_tensor({3, 3});

    Tensor at1 = cfg_combine(ec, en, {1.0});
    Tensor at0 = cfg_combine(ec, en, {0.0});
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(at1[i] == ec[i]);
        CHECK(at0[i] == en[i]);
    }
    // the paper's generation-time scale
    Tensor one = Tensor::full({1}, 1.0);
    Tensor zero = Tensor({1});
    CHECK(cfg_combine(one, zero, {7.5})[0] == 7.5);

    // affine in w: midpoint property, exact
    Tensor mid = cfg_combine(ec, en, {0.5});
    for (std::size_t i = 0; i < 9; ++i) CHECK(mid[i] == 0.5 * at1[i] + 0.5 * at0[i]);

    CHECK_THROWS_AS(validate(GuidanceConfig{-0.1}), ConfigError);
}

TEST_CASE("ddim_step: degenerate, noiseless and scalar-oracle cases") {
    SECTION("equal alpha_bar leaves x unchanged") {
        NoiseSchedule s;
        s.steps = 1;
        s.alpha_bar = {0.5, 0.5};  // deliberately non-monotone: bypass validate()
        s.model_step = {0, 1};
        RngStream rng(10);
        Tensor x = rng.gaussian_tensor({2, 2});
        Tensor eps = rng.gaussian_tensor({2, 2});
        Tensor out = ddim_step(x, eps, 1, s);
        for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == Catch::Approx(x[i]).margin(1e-12));
    }
    NoiseSchedule s;
    s.steps = 1;
    s.alpha_bar = {0.81, 0.25};
    s.model_step = {0, 1};
    SECTION("eps = 0 is a pure rescale") {
        Tensor x = Tensor::full({2}, 3.0);
        Tensor out = ddim_step(x, Tensor({2}), 1, s);
        CHECK(out[0] == Catch::Approx(std::sqrt(0.81 / 0.25) * 3.0).epsilon(1e-15));
    }
    SECTION("64-bit closed-form oracle") {
        Tensor x = Tensor::full({1}, 1.0);
        Tensor eps = Tensor::full({1}, 0.5);
        Tensor out = ddim_step(x, eps, 1, s);
        // sqrt(.81)*(1 - sqrt(.75)*.5)/sqrt(.25) + sqrt(.19)*.5
        const double expect =
            0.9 * (1.0 - std::sqrt(0.75) * 0.5) / 0.5 + std::sqrt(1.0 - 0.81) * 0.5;
        CHECK(out[0] == Catch::Approx(expect).epsilon(1e-14));
        CHECK(out[0] == Catch::Approx(1.2385220837710389).epsilon(1e-12));

        SECTION("and its inverse recovers x") {
            Tensor back = ddim_invert_step(out, eps, 1, s);
            CHECK(back[0] == Catch::Approx(1.0).margin(1e-12));
        }
    }
    SECTION("step range errors") {
        Tensor x({1});
        CHECK_THROWS_AS(ddim_step(x, x, 0, s), StepError);
        CHECK_THROWS_AS(ddim_step(x, x, 2, s), StepError);
        CHECK_THROWS_AS(ddim_invert_step(x, x, 2, s), StepError);
    }
}

TEST_CASE("ddim step pair is a mutual inverse at every t (property)") {
    NoiseSchedule s = make_schedule_rescaled(50);
    RngStream rng(123);
    for (int rep = 0; rep < 40; ++rep) {
        const int t = 1 + static_cast<int>(rng.uniform_int(50));
        Tensor x = rng.gaussian_tensor({4, 4});
        Tensor eps = rng.gaussian_tensor({4, 4});
        Tensor fwd = ddim_invert_step(ddim_step(x, eps, t, s), eps, t, s);
        Tensor bck = ddim_step(ddim_invert_step(x, eps, t, s), eps, t, s);
        CHECK(max_abs_diff(fwd, x) <= 1e-12);
        CHECK(max_abs_diff(bck, x) <= 1e-12);
    }
    SECTION("noiseless inversion is the inverse rescale") {
        Tensor x = Tensor::full({2}, 1.5);
        Tensor out = ddim_invert_step(x, Tensor({2}), 10, s);
        CHECK(out[0] == Catch::Approx(std::sqrt(s.alpha_bar[10] / s.alpha_bar[9]) * 1.5)
                            .epsilon(1e-13));
    }
}

TEST_CASE("forward_diffuse is linear in (x0, eps) and shape preserving") {
    NoiseSchedule s = make_schedule_rescaled(50);
    RngStream rng(321);
    Tensor a = rng.gaussian_tensor({2, 3});
    Tensor b = rng.gaussian_tensor({2, 3});
    Tensor e1 = rng.gaussian_tensor({2, 3});
    Tensor e2 = rng.gaussian_tensor({2, 3});
    const int t = 17;
    Tensor lhs = forward_diffuse(add(a, b), t, add(e1, e2), s);
    Tensor rhs = add(forward_diffuse(a, t, e1, s), forward_diffuse(b, t, e2, s));
    CHECK(max_abs_diff(lhs, rhs) <= 1e-12);
    CHECK(lhs.shape() == a.shape());
}
