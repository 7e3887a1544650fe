#include <catch2/catch_amalgamated.hpp>

#include "ledit/trainer.hpp"
#include "support/toy_setup.hpp"

using namespace ledit;
using fixtures::tiny_world;

namespace {

ToyDatasetConfig tiny_data_cfg() {
    ToyDatasetConfig c;
    c.grid_h = 4;
    c.grid_w = 4;
    c.channels = 2;
    c.prompt_length = 5;
    return c;
}

} // namespace

TEST_CASE("make_toy_dataset: determinism and coverage") {
    Vocabulary vocab = Vocabulary::toy_default();
    auto a = make_toy_dataset(vocab, 9, 36);
    auto b = make_toy_dataset(vocab, 9, 36);
    REQUIRE(a.size() == 36);
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].prompt == b[i].prompt);
        REQUIRE(max_abs_diff(a[i].image, b[i].image) == 0.0);
    }
    auto c = make_toy_dataset(vocab, 10, 36);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i)
        any_diff |= max_abs_diff(a[i].image, c[i].image) > 0.0;
    CHECK(any_diff); // the jitter depends on the seed

    SECTION("attribute histogram is uniform within one for multiples of the combo count") {
        std::map<std::string, int> hist;
        for (const auto& s : a) ++hist[s.prompt];
        REQUIRE(hist.size() == toy::combination_count());
        for (const auto& [prompt, count] : hist) CHECK(count == 3);
    }
    SECTION("histogram stays within one for non-multiples") {
        auto d = make_toy_dataset(vocab, 11, 17);
        std::map<std::string, int> hist;
        for (const auto& s : d) ++hist[s.prompt];
        int lo = 1 << 20, hi = 0;
        for (const auto& [prompt, count] : hist) {
            lo = std::min(lo, count);
            hi = std::max(hi, count);
        }
        CHECK(hi - lo <= 1);
    }
}

TEST_CASE("rendered 'square left' samples stay in the left half-grid") {
    Vocabulary vocab = Vocabulary::toy_default();
    auto data = make_toy_dataset(vocab, 17, 48);
    int seen = 0;
    for (const auto& s : data) {
        if (s.prompt.rfind("square left", 0) != 0) continue;
        ++seen;
        const auto& img = s.image;
        const std::size_t h = img.extent(0), w = img.extent(1), c = img.extent(2);
        bool left_nonzero = false;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double v = img[(y * w + x) * c + ch];
                    if (x >= w / 2) REQUIRE(v == 0.0);
                    left_nonzero |= v != 0.0;
                }
        CHECK(left_nonzero);
    }
    CHECK(seen >= 4);
}

TEST_CASE("train: zero learning rate leaves the weights bitwise unchanged") {
    auto w = tiny_world(61);
    auto data = make_toy_dataset(w.encoder->vocab(), 3, 12, tiny_data_cfg());
    TrainConfig cfg;
    cfg.steps = 3;
    cfg.batch = 2;
    cfg.lr = 0.0;
    cfg.holdout_probes = 4;
    TrainOutput out = train(*w.denoiser, *w.encoder, data, w.sched, cfg);
    for (const auto& [name, t] : w.denoiser->weights().tensors) {
        const Tensor& after = out.weights.at(name);
        REQUIRE(max_abs_diff(t, after) == 0.0);
    }
    CHECK(out.report.loss_trace.size() == 3);
}

TEST_CASE("train: deterministic loss trace and decreasing held-out loss") {
    auto w = tiny_world(62);
    auto data = make_toy_dataset(w.encoder->vocab(), 4, 24, tiny_data_cfg());
    TrainConfig cfg;
    cfg.steps = 120;
    cfg.batch = 2;
    cfg.lr = 3e-3;
    cfg.holdout_probes = 8;

    TrainOutput a = train(*w.denoiser, *w.encoder, data, w.sched, cfg);
    TrainOutput b = train(*w.denoiser, *w.encoder, data, w.sched, cfg);
    REQUIRE(a.report.loss_trace.size() == b.report.loss_trace.size());
    for (std::size_t i = 0; i < a.report.loss_trace.size(); ++i)
        REQUIRE(a.report.loss_trace[i].second == b.report.loss_trace[i].second);

    CHECK(a.report.holdout_after < a.report.holdout_before);

    SECTION("smoothed endpoints move the right way") {
        auto [head, tail] = smoothed_endpoints(a.report, 10);
        CHECK(tail < head);
    }
}

TEST_CASE("train: runaway learning rate raises DivergenceError") {
    auto w = tiny_world(63);
    auto data = make_toy_dataset(w.encoder->vocab(), 5, 12, tiny_data_cfg());
    TrainConfig cfg;
    cfg.steps = 40;
    cfg.batch = 2;
    cfg.lr = 1e18;
    cfg.holdout_probes = 2;
    CHECK_THROWS_AS(train(*w.denoiser, *w.encoder, data, w.sched, cfg), DivergenceError);
}

TEST_CASE("train input validation") {
    auto w = tiny_world(64);
    TrainConfig cfg;
    cfg.steps = 0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    TrainConfig ok;
    CHECK_THROWS_AS(train(*w.denoiser, *w.encoder, {}, w.sched, ok), ConfigError);
}

TEST_CASE("prototype classifier recovers the shape of clean renders") {
    Vocabulary vocab = Vocabulary::toy_default();
    auto data = make_toy_dataset(vocab, 21, 120);
    PrototypeClassifier clf = PrototypeClassifier::fit(data, vocab);

    auto fresh = make_toy_dataset(vocab, 22, 60);
    int correct = 0;
    for (const auto& s : fresh) {
        std::size_t want = 0;
        for (std::size_t k = 0; k < toy::shapes().size(); ++k)
            if (s.prompt.rfind(toy::shapes()[k], 0) == 0) want = k;
        correct += clf.classify_shape(s.image) == want;
    }
    CHECK(static_cast<double>(correct) / 60.0 >= 0.9);
}
