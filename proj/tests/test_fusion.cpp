#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "ledit/fusion.hpp"
#include "ledit/rng.hpp"
#include "support/toy_setup.hpp"

using namespace ledit;
using fixtures::tiny_world;

namespace {

struct FusionWorld {
    fixtures::TinyWorld base;
    std::unique_ptr<Denoiser> den;
    std::unique_ptr<ConditionEncoder> adapter;

    EditContext ctx() const { return {*den, base.sched, *base.encoder, adapter.get()}; }
};

FusionWorld fusion_world(std::uint64_t seed = 51) {
    FusionWorld w;
    w.base = tiny_world(seed);
    DenoiserWeights ww = w.base.denoiser->weights();
    RngStream rng(seed ^ 0xf00d);
    ww.tensors["out.w"] = scale(rng.gaussian_tensor(ww.at("out.w").shape()), 0.25);
    w.den = std::make_unique<Denoiser>(ww);
    w.adapter = std::make_unique<ConditionEncoder>(w.base.cfg.grid_h, w.base.cfg.grid_w,
                                                   w.base.cfg.injection_sites());
    return w;
}

Tensor tiny_image(std::uint64_t seed, const DenoiserConfig& cfg) {
    RngStream rng(seed);
    Tensor img({cfg.grid_h, cfg.grid_w, cfg.channels});
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform() * 0.8;
    return img;
}

MaskRegion left_half(const DenoiserConfig& cfg) {
    MaskRegion m = MaskRegion::empty(cfg.grid_h, cfg.grid_w);
    for (std::size_t y = 0; y < cfg.grid_h; ++y)
        for (std::size_t x = 0; x < cfg.grid_w / 2; ++x) m.in[y * cfg.grid_w + x] = 1;
    return m;
}

ExternalCondition toy_condition(const DenoiserConfig& cfg) {
    Tensor g({cfg.grid_h, cfg.grid_w});
    for (std::size_t y = 1; y < cfg.grid_h - 1; ++y) g[y * cfg.grid_w + 1] = 1.0;
    return {g, ExternalCondition::Kind::sketch};
}

} // namespace

TEST_CASE("mask file format round-trips and rejects damage") {
    MaskRegion m = MaskRegion::empty(3, 4);
    m.in = {1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 1, 1};
    std::stringstream ss;
    mask_write(ss, m);
    CHECK(ss.str().rfind("MASK v1 3 4\n", 0) == 0);
    MaskRegion back = mask_read(ss);
    CHECK(back.h == 3);
    CHECK(back.w == 4);
    CHECK(back.in == m.in);

    std::stringstream bad("MASK v1 2 2\n10\n2x\n");
    CHECK_THROWS_AS(mask_read(bad), IoError);
    std::stringstream trunc("MASK v1 2 2\n10\n");
    CHECK_THROWS_AS(mask_read(trunc), IoError);
}

TEST_CASE("region_stats splits the grid by mask membership") {
    MaskRegion m = MaskRegion::empty(2, 2);
    m.in = {1, 0, 0, 0};
    Tensor a({2, 2, 1}, {1.0, 2.0, 3.0, 4.0});
    Tensor b({2, 2, 1}, {0.0, 2.5, 3.0, 4.0});
    RegionStats st = region_stats(a, b, m);
    CHECK(st.pixels_in == 1);
    CHECK(st.pixels_out == 3);
    CHECK(st.mean_abs_in == 1.0);
    CHECK(st.mean_abs_out == Catch::Approx(0.5 / 3.0));
}

TEST_CASE("masked intermediate prediction stitches the two branches per pixel") {
    auto w = fusion_world();
    EditContext ctx = w.ctx();
    const auto& cfg = w.base.cfg;
    Tensor x0 = tiny_image(1, cfg);
    PromptEmbedding condS = w.base.prompt("square left dark");
    PromptEmbedding condT = w.base.prompt("circle left dark");
    NullEmbedding null = w.base.null();
    auto inv = direct_inversion(*w.den, x0, condS, null, w.base.sched);
    AdapterFeatures feats = w.adapter->encode(toy_condition(cfg), 1.0);

    // checkerboard mask
    MaskRegion A = MaskRegion::empty(cfg.grid_h, cfg.grid_w);
    for (std::size_t p = 0; p < A.in.size(); ++p) A.in[p] = p % 2;

    RngStream rng(5);
    Tensor x = rng.gaussian_tensor({cfg.grid_h, cfg.grid_w, cfg.channels});
    MaskedEps parts = masked_eps_intermediate(ctx, 3, x, A, condS, condT, feats, inv.cache, null,
                                              null, {7.5}, {}, nullptr);
    const std::size_t c = cfg.channels;
    for (std::size_t p = 0; p < A.in.size(); ++p)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double want =
                A.contains(p) ? parts.in_region[p * c + ch] : parts.out_region[p * c + ch];
            REQUIRE(parts.stitched[p * c + ch] == want);
        }

    SECTION("full mask equals the plain target-prompt adapter pass") {
        MaskRegion full = MaskRegion::full(cfg.grid_h, cfg.grid_w);
        MaskedEps pf = masked_eps_intermediate(ctx, 3, x, full, condS, condT, feats, inv.cache,
                                               null, null, {7.5}, {}, nullptr);
        Tensor plain = w.den
                           ->predict_noise(w.base.sched.model_step[3], x, condT, null, {7.5},
                                           &feats, nullptr)
                           .eps;
        CHECK(max_abs_diff(pf.stitched, plain) == 0.0);
    }
    SECTION("empty mask equals the eps-bar pass") {
        MaskRegion none = MaskRegion::empty(cfg.grid_h, cfg.grid_w);
        MaskedEps pe = masked_eps_intermediate(ctx, 3, x, none, condS, condT, feats, inv.cache,
                                               null, null, {7.5}, {}, nullptr);
        Tensor bar = eps_bar(ctx, 3, x, condS, null, &feats, inv.cache, {7.5}, {});
        CHECK(max_abs_diff(pe.stitched, bar) == 0.0);
    }
}

TEST_CASE("masked target prediction: map reuse is bitwise and the stitch is exact") {
    auto w = fusion_world(52);
    EditContext ctx = w.ctx();
    const auto& cfg = w.base.cfg;
    Tensor x0 = tiny_image(2, cfg);
    PromptEmbedding condS = w.base.prompt("square left dark");
    PromptEmbedding condT = w.base.prompt("triangle left dark");
    auto inv = direct_inversion(*w.den, x0, condS, w.base.null(), w.base.sched);

    MaskRegion A = left_half(cfg);
    EditConfig ecfg;
    ecfg.seed = 7;
    ecfg.verify_substitution = true;
    RngStream rng(ecfg.seed);
    auto inter = generate_intermediate(ctx, inv, A, condS, condT, toy_condition(cfg), ecfg, rng);
    EditResult res = generate_target(ctx, inv, A, condS, condT, toy_condition(cfg), inter.cache,
                                     ecfg, inter.init_noise);
    REQUIRE(res.checks.ran);
    CHECK(res.checks.maps_bitwise);
    CHECK(res.checks.stitch_max_err == 0.0);
    CHECK(res.target_image.all_finite());
}

TEST_CASE("generate_intermediate: the three init modes differ pairwise") {
    auto w = fusion_world(53);
    EditContext ctx = w.ctx();
    const auto& cfg = w.base.cfg;
    Tensor x0 = tiny_image(3, cfg);
    PromptEmbedding condS = w.base.prompt("circle right dark");
    PromptEmbedding condT = w.base.prompt("square right dark");
    auto inv = direct_inversion(*w.den, x0, condS, w.base.null(), w.base.sched);
    MaskRegion A = left_half(cfg);

    std::vector<Tensor> outs;
    for (auto mode : {EditConfig::InitMode::gaussian, EditConfig::InitMode::source_noise,
                      EditConfig::InitMode::blend}) {
        EditConfig ecfg;
        ecfg.init_mode = mode;
        ecfg.seed = 11;
        RngStream rng(ecfg.seed);
        auto inter =
            generate_intermediate(ctx, inv, A, condS, condT, toy_condition(cfg), ecfg, rng);
        outs.push_back(inter.trajectory[0]);

        // cache completeness at every step
        for (int t = 1; t <= w.base.sched.steps; ++t)
            for (const auto& site : cfg.self_attention_sites())
                CHECK(inter.cache.has({w.base.sched.model_step[static_cast<std::size_t>(t)], site,
                                       Branch::conditional}));
    }
    CHECK(l2_distance(outs[0], outs[1]) > 0.0);
    CHECK(l2_distance(outs[0], outs[2]) > 0.0);
    CHECK(l2_distance(outs[1], outs[2]) > 0.0);
}

TEST_CASE("degenerate configuration reduces the intermediate to the source reconstruction") {
    auto w = fusion_world(54);
    EditContext ctx = w.ctx();
    const auto& cfg = w.base.cfg;
    Tensor x0 = tiny_image(4, cfg);
    PromptEmbedding condS = w.base.prompt("triangle right light");
    PromptEmbedding condT = w.base.prompt("square right light");
    auto inv = direct_inversion(*w.den, x0, condS, w.base.null(), w.base.sched);

    EditConfig ecfg;
    ecfg.adapter_strength = 0.0;
    ecfg.init_mode = EditConfig::InitMode::source_noise;
    ecfg.seed = 3;
    MaskRegion none = MaskRegion::empty(cfg.grid_h, cfg.grid_w);
    RngStream rng(ecfg.seed);
    auto inter = generate_intermediate(ctx, inv, none, condS, condT, toy_condition(cfg), ecfg, rng);
    auto recon = reconstruct_source(ctx, inv, condS, w.base.null(), ecfg);
    REQUIRE(recon.size() == inter.trajectory.size());
    for (std::size_t t = 0; t < recon.size(); ++t)
        CHECK(max_abs_diff(inter.trajectory[t], recon[t]) <= 1e-9);
}

TEST_CASE("masafusion_edit: no-edit identity, determinism and accounting") {
    auto w = fusion_world(55);
    EditContext ctx = w.ctx();
    const auto& cfg = w.base.cfg;
    Tensor x0 = tiny_image(5, cfg);
    PromptEmbedding condS = w.base.prompt("square left dark");
    PromptEmbedding condT = w.base.prompt("circle left light");
    MaskRegion A = left_half(cfg);
    ExternalCondition c = toy_condition(cfg);

    SECTION("no-edit identity under the degenerate configuration") {
        EditConfig ecfg;
        ecfg.adapter_strength = 0.0;
        ecfg.seed = 21;
        MaskRegion none = MaskRegion::empty(cfg.grid_h, cfg.grid_w);
        EditResult res =
            masafusion_edit(ctx, x0, condS, condS, none, c, InversionKind::di, ecfg);
        CHECK(max_abs_diff(res.target_image, res.source_recon) <= 1e-9);
        REQUIRE(res.intermediate_image.has_value());
    }
    SECTION("fixed seed reproduces the edit bitwise") {
        EditConfig ecfg;
        ecfg.seed = 22;
        EditResult a = masafusion_edit(ctx, x0, condS, condT, A, c, InversionKind::di, ecfg);
        EditResult b = masafusion_edit(ctx, x0, condS, condT, A, c, InversionKind::di, ecfg);
        CHECK(max_abs_diff(a.target_image, b.target_image) == 0.0);
        CHECK(max_abs_diff(*a.intermediate_image, *b.intermediate_image) == 0.0);
        CHECK(a.nfe == b.nfe);
    }
    SECTION("both inversion kinds succeed; the direct kind needs fewer evaluations") {
        EditConfig ecfg;
        ecfg.seed = 23;
        NtiConfig nti;
        nti.inner_steps = 2;
        EditResult rd = masafusion_edit(ctx, x0, condS, condT, A, c, InversionKind::di, ecfg);
        EditResult rn = masafusion_edit(ctx, x0, condS, condT, A, c, InversionKind::nti, ecfg, nti);
        CHECK(rd.target_image.all_finite());
        CHECK(rn.target_image.all_finite());
        CHECK(rd.nfe < rn.nfe);
        REQUIRE(rd.stats.has_value());
        CHECK(rd.stats->pixels_in + rd.stats->pixels_out == cfg.pixels());
    }
    SECTION("an all-ones mask is accepted with a warning") {
        EditConfig ecfg;
        ecfg.seed = 24;
        MaskRegion full = MaskRegion::full(cfg.grid_h, cfg.grid_w);
        EditResult res = masafusion_edit(ctx, x0, condS, condT, full, c, InversionKind::di, ecfg);
        CHECK(res.degenerate_mask_warning);
    }
}

TEST_CASE("masafusion_edit with NTI: no-edit identity holds through the tuned nulls") {
    auto w = fusion_world(56);
    EditContext ctx = w.ctx();
    const auto& cfg = w.base.cfg;
    Tensor x0 = tiny_image(6, cfg);
    PromptEmbedding condS = w.base.prompt("circle left dark");
    EditConfig ecfg;
    ecfg.adapter_strength = 0.0;
    ecfg.seed = 31;
    NtiConfig nti;
    nti.inner_steps = 2;
    MaskRegion none = MaskRegion::empty(cfg.grid_h, cfg.grid_w);
    EditResult res = masafusion_edit(ctx, x0, condS, condS, none, toy_condition(cfg),
                                     InversionKind::nti, ecfg, nti);
    CHECK(max_abs_diff(res.target_image, res.source_recon) <= 1e-9);
}

TEST_CASE("edit_without_adapter: identities at the interval extremes") {
    auto w = fusion_world(57);
    EditContext ctx = w.ctx();
    const auto& cfg = w.base.cfg;
    Tensor x0 = tiny_image(7, cfg);
    PromptEmbedding condS = w.base.prompt("square right dark");
    PromptEmbedding condT = w.base.prompt("triangle right dark");
    NullEmbedding null = w.base.null();

    SECTION("full interval with an empty mask reproduces the source reconstruction exactly") {
        EditConfig ecfg;
        ecfg.seed = 41;
        MaskRegion none = MaskRegion::empty(cfg.grid_h, cfg.grid_w);
        EditResult res =
            edit_without_adapter(ctx, x0, condS, condT, none, InversionKind::di, ecfg);
        CHECK(max_abs_diff(res.target_image, res.source_recon) <= 1e-12);
    }
    SECTION("empty interval equals plain target-prompt generation from x_T") {
        EditConfig ecfg;
        ecfg.seed = 42;
        ecfg.interval_end = 0; // canonical empty interval
        MaskRegion A = left_half(cfg);
        EditResult res = edit_without_adapter(ctx, x0, condS, condT, A, InversionKind::di, ecfg);

        auto inv = direct_inversion(*w.den, x0, condS, null, w.base.sched);
        auto plain = ddim_generate(
            *w.den, inv.x_terminal(), condT,
            [&](int) -> const NullEmbedding& { return null; }, GuidanceConfig{ecfg.guidance},
            w.base.sched);
        CHECK(max_abs_diff(res.target_image, plain[0]) == 0.0);
    }
}

TEST_CASE("embctrl_edit: splice identities") {
    auto w = fusion_world(58);
    EditContext ctx = w.ctx();
    const auto& cfg = w.base.cfg;
    Tensor x0 = tiny_image(8, cfg);
    const Vocabulary& vocab = w.base.encoder->vocab();
    TokenSequence src = tokenize(vocab, "square left dark", 5);
    TokenSequence tgt = tokenize(vocab, "square left light", 5);
    NullEmbedding null = w.base.null();

    SECTION("empty edit set reproduces the source reconstruction") {
        EditConfig ecfg;
        ecfg.seed = 51;
        EditResult res =
            embctrl_edit(ctx, x0, src, tgt, {}, InversionKind::di, ecfg);
        CHECK(max_abs_diff(res.target_image, res.source_recon) == 0.0);
    }
    SECTION("full edit set equals plain target-prompt generation") {
        EditConfig ecfg;
        ecfg.seed = 52;
        std::set<std::size_t> all;
        for (std::size_t i = 0; i < src.length(); ++i) all.insert(i);
        EditResult res = embctrl_edit(ctx, x0, src, tgt, all, InversionKind::di, ecfg);

        auto inv = direct_inversion(*w.den, x0, ctx.enc.encode(src), null, w.base.sched);
        auto plain = ddim_generate(
            *w.den, inv.x_terminal(), ctx.enc.encode(tgt),
            [&](int) -> const NullEmbedding& { return null; }, GuidanceConfig{ecfg.guidance},
            w.base.sched);
        CHECK(max_abs_diff(res.target_image, plain[0]) == 0.0);
    }
    SECTION("single-token edit changes the output without collapsing to either extreme") {
        // the strict narrow-vs-wide distance ordering is a trained-model
        // property; the acceptance suite asserts it on the toy edit suite
        EditConfig ecfg;
        ecfg.seed = 53;
        auto edited = differing_positions(src, tgt); // {2}
        REQUIRE(edited == std::set<std::size_t>{2});
        EditResult narrow = embctrl_edit(ctx, x0, src, tgt, edited, InversionKind::di, ecfg);
        std::set<std::size_t> all;
        for (std::size_t i = 0; i < src.length(); ++i) all.insert(i);
        EditResult wide = embctrl_edit(ctx, x0, src, tgt, all, InversionKind::di, ecfg);
        CHECK(l2_distance(narrow.target_image, narrow.source_recon) > 0.0);
        CHECK(l2_distance(narrow.target_image, wide.target_image) > 0.0);
    }
    SECTION("unequal lengths are rejected") {
        TokenSequence shorter = TokenSequence::pad({1}, 4, 0);
        CHECK_THROWS_AS(embctrl_edit(ctx, x0, src, shorter, {}, InversionKind::di, EditConfig{}),
                        ContractError);
    }
}

TEST_CASE("edit config validation") {
    auto w = fusion_world(59);
    EditConfig bad;
    bad.interval_begin = 5;
    bad.interval_end = 3;
    CHECK_THROWS_AS(validate(bad, 8), ConfigError);
    EditConfig neg;
    neg.guidance = -1.0;
    CHECK_THROWS_AS(validate(neg, 8), ConfigError);
    EditConfig empty_ok;
    empty_ok.interval_end = 0;
    CHECK_NOTHROW(validate(empty_ok, 8));
}
