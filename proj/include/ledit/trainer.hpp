#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ledit/denoiser.hpp"
#include "ledit/rng.hpp"
#include "ledit/schedule.hpp"
#include "ledit/tape.hpp"
#include "ledit/tensor.hpp"
#include "ledit/text_encoder.hpp"

namespace ledit {

/// One procedurally rendered training sample: a shape/position/shade image on
/// the latent grid plus the prompt that describes it.
struct ToySample {
    Tensor image; // H x W x C
    TokenSequence tokens;
    std::string prompt;
};

struct ToyDatasetConfig {
    std::size_t grid_h = 16, grid_w = 16, channels = 4;
    std::size_t prompt_length = 8;
};

namespace toy {

inline const std::vector<std::string>& shapes() {
    static const std::vector<std::string> v = {"square", "circle", "triangle"};
    return v;
}
inline const std::vector<std::string>& positions() {
    static const std::vector<std::string> v = {"left", "right"};
    return v;
}
inline const std::vector<std::string>& shades() {
    static const std::vector<std::string> v = {"dark", "light"};
    return v;
}
inline std::size_t combination_count() {
    return shapes().size() * positions().size() * shades().size();
}

/// Render one attribute combination. Jitter stays within the position's
/// half-grid so "left" shapes never touch the right half.
inline Tensor render(const ToyDatasetConfig& cfg, std::size_t shape, std::size_t position,
                     std::size_t shade, RngStream& rng) {
    Tensor img({cfg.grid_h, cfg.grid_w, cfg.channels});
    // per-sample intensity jitter only; geometry is fixed per combination so
    // the class prototypes stay crisp
    const double intensity = (shade == 0 ? 0.45 : 0.95) + 0.04 * (rng.uniform() - 0.5);

    const double half = static_cast<double>(cfg.grid_w) / 2.0;
    const double cx = (position == 0 ? half / 2.0 : half + half / 2.0) - 0.5;
    const double cy = static_cast<double>(cfg.grid_h) / 2.0 - 0.5;
    const double r = std::min(half, static_cast<double>(cfg.grid_h)) * 0.35;

    for (std::size_t y = 0; y < cfg.grid_h; ++y)
        for (std::size_t x = 0; x < cfg.grid_w; ++x) {
            // clip to the half-grid of the position
            if (position == 0 && static_cast<double>(x) >= half) continue;
            if (position == 1 && static_cast<double>(x) < half) continue;
            const double dx = static_cast<double>(x) - cx;
            const double dy = static_cast<double>(y) - cy;
            const double rad2 = dx * dx + dy * dy;
            bool inside = false;
            switch (shape) {
                case 0: // filled box
                    inside = std::fabs(dx) <= r && std::fabs(dy) <= r;
                    break;
                case 1: // ring
                    inside = rad2 <= (r + 0.8) * (r + 0.8) && rad2 >= (r - 1.2) * (r - 1.2);
                    break;
                default: // filled upward triangle, apex at the top
                    inside = dy >= -r && dy <= r && std::fabs(dx) <= (dy + r) * 0.65;
            }
            if (!inside) continue;
            for (std::size_t ch = 0; ch < cfg.channels; ++ch)
                img[(y * cfg.grid_w + x) * cfg.channels + ch] = intensity;
        }
    return img;
}

} // namespace toy

/// Deterministic dataset covering all shape x position x shade combinations
/// with equal frequency (within one).
inline std::vector<ToySample> make_toy_dataset(const Vocabulary& vocab, std::uint64_t seed,
                                               std::size_t n, ToyDatasetConfig cfg = {}) {
    if (n < 1) throw ConfigError("make_toy_dataset: n must be >= 1");
    std::vector<ToySample> out;
    out.reserve(n);
    const auto& sh = toy::shapes();
    const auto& po = toy::positions();
    const auto& sd = toy::shades();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t combo = i % toy::combination_count();
        const std::size_t shape = combo / (po.size() * sd.size());
        const std::size_t pos = (combo / sd.size()) % po.size();
        const std::size_t shade = combo % sd.size();
        RngStream rng(RngStream::word_at(seed, i));
        ToySample s;
        s.prompt = sh[shape] + " " + po[pos] + " " + sd[shade];
        s.tokens = tokenize(vocab, s.prompt, cfg.prompt_length);
        s.image = toy::render(cfg, shape, pos, shade, rng);
        out.push_back(std::move(s));
    }
    return out;
}

struct TrainConfig {
    int steps = 2400;
    int batch = 4;
    double lr = 0.04;
    std::uint64_t seed = 1;
    double cond_drop = 0.1; // probability of training the unconditional branch
    int holdout_probes = 48;
};

inline void validate(const TrainConfig& c) {
    if (c.steps < 1 || c.batch < 1 || !(c.lr >= 0.0) || c.holdout_probes < 1)
        throw ConfigError("train config fields must be positive");
    if (c.cond_drop < 0.0 || c.cond_drop > 1.0) throw ConfigError("cond_drop must be in [0,1]");
}

struct TrainReport {
    std::vector<std::pair<int, double>> loss_trace; // (step, batch loss)
    double holdout_before = 0.0;
    double holdout_after = 0.0;
};

struct TrainOutput {
    DenoiserWeights weights;
    TrainReport report;
};

namespace detail {

struct TrainProbe {
    std::size_t sample;
    int t;
    Tensor eps;
    bool drop_cond;
};

/// Noise-prediction loss (mean squared error over elements) for one probe
/// set, optionally recording gradients for the weights.
inline double diffusion_loss(const Denoiser& den, const std::vector<ToySample>& data,
                             const std::map<TokenSequence, PromptEmbedding>& embeddings,
                             const NullEmbedding& null, const NoiseSchedule& sched,
                             const std::vector<TrainProbe>& probes, GradientTape* tape,
                             std::map<std::string, Var>* weight_vars) {
    GradientTape local;
    GradientTape& tp = tape ? *tape : local;
    std::map<std::string, Var> wv;
    for (const auto& [name, t] : den.weights().tensors) wv.emplace(name, tp.input(t, tape != nullptr));
    Var total{};
    for (const auto& p : probes) {
        const ToySample& s = data[p.sample];
        Tensor xt = forward_diffuse(s.image, p.t, p.eps, sched);
        Var xv = tp.constant(den.flatten_latent(xt));
        const Tensor& cond =
            p.drop_cond ? null.matrix : embeddings.at(s.tokens).matrix;
        Var eps_pred = den.forward_with_weights(tp, wv, sched.model_step[static_cast<std::size_t>(p.t)],
                                                xv, tp.constant(cond), Branch::conditional);
        Var diff = tp.sub(eps_pred, tp.constant(den.flatten_latent(p.eps)));
        Var se = tp.sum(tp.mul(diff, diff));
        total = total.valid() ? tp.add(total, se) : se;
    }
    const double denom = static_cast<double>(probes.size()) *
                         static_cast<double>(probes.front().eps.numel());
    Var loss = tp.scale(total, 1.0 / denom);
    if (tape) {
        tp.backward(loss);
        *weight_vars = std::move(wv);
    }
    return tp.value(loss)[0];
}

/// Mean loss over probes, evaluated in small chunks to bound tape memory.
inline double chunked_loss(const Denoiser& den, const std::vector<ToySample>& data,
                           const std::map<TokenSequence, PromptEmbedding>& embeddings,
                           const NullEmbedding& null, const NoiseSchedule& sched,
                           const std::vector<TrainProbe>& probes) {
    double acc = 0.0;
    std::size_t i = 0;
    while (i < probes.size()) {
        const std::size_t n = std::min<std::size_t>(4, probes.size() - i);
        std::vector<TrainProbe> chunk(probes.begin() + static_cast<long>(i),
                                      probes.begin() + static_cast<long>(i + n));
        acc += static_cast<double>(n) *
               diffusion_loss(den, data, embeddings, null, sched, chunk, nullptr, nullptr);
        i += n;
    }
    return acc / static_cast<double>(probes.size());
}

} // namespace detail

/// Plain gradient-descent training of the noise-prediction objective with
/// classifier-free condition dropout. Deterministic under the config seed.
inline TrainOutput train(const Denoiser& start, const CausalTextEncoder& encoder,
                         const std::vector<ToySample>& data, const NoiseSchedule& sched,
                         const TrainConfig& cfg) {
    validate(cfg);
    if (data.empty()) throw ConfigError("train: dataset is empty");

    TrainOutput out;
    out.weights = start.weights();

    // embeddings are fixed; compute each distinct prompt once
    std::map<TokenSequence, PromptEmbedding> embeddings;
    for (const auto& s : data)
        if (!embeddings.count(s.tokens)) embeddings.emplace(s.tokens, encoder.encode(s.tokens));
    const NullEmbedding null = encoder.null_embedding();

    RngStream rng(cfg.seed);
    auto draw_probe = [&](RngStream& r) {
        detail::TrainProbe p;
        p.sample = r.uniform_int(data.size());
        p.t = 1 + static_cast<int>(r.uniform_int(static_cast<std::uint64_t>(sched.steps)));
        p.eps = r.gaussian_tensor(data.front().image.shape());
        p.drop_cond = r.uniform() < cfg.cond_drop;
        return p;
    };

    // fixed held-out probes, evaluated before and after training
    RngStream holdout_rng = rng.split(0x601d);
    std::vector<detail::TrainProbe> holdout;
    for (int i = 0; i < cfg.holdout_probes; ++i) holdout.push_back(draw_probe(holdout_rng));

    Denoiser model(out.weights);
    out.report.holdout_before =
        detail::chunked_loss(model, data, embeddings, null, sched, holdout);

    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<detail::TrainProbe> batch;
        for (int b = 0; b < cfg.batch; ++b) batch.push_back(draw_probe(rng));
        GradientTape tape;
        std::map<std::string, Var> wv;
        double loss = 0.0;
        try {
            loss = detail::diffusion_loss(model, data, embeddings, null, sched, batch, &tape, &wv);
        } catch (const InputError&) {
            throw DivergenceError("training loss non-finite at step " + std::to_string(step));
        }
        if (!std::isfinite(loss))
            throw DivergenceError("training loss non-finite at step " + std::to_string(step));
        out.report.loss_trace.emplace_back(step, loss);
        DenoiserWeights w = model.weights();
        for (auto& [name, tensor] : w.tensors)
            tensor = affine(tensor, 1.0, tape.grad(wv.at(name)), -cfg.lr);
        model = Denoiser(std::move(w));
    }

    out.report.holdout_after = detail::chunked_loss(model, data, embeddings, null, sched, holdout);
    out.weights = model.weights();
    return out;
}

/// Smoothed loss over the first/last `window` recorded steps.
inline std::pair<double, double> smoothed_endpoints(const TrainReport& r, int window = 50) {
    const std::size_t n = r.loss_trace.size();
    const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(window), n);
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < w; ++i) {
        head += r.loss_trace[i].second;
        tail += r.loss_trace[n - 1 - i].second;
    }
    return {head / static_cast<double>(w), tail / static_cast<double>(w)};
}

// ---------------------------------------------------------------------------
// Nearest-prototype shape classifier (frozen evaluation aid)
// ---------------------------------------------------------------------------

struct PrototypeClassifier {
    std::vector<Tensor> prototypes;       // one per attribute combination
    std::vector<std::size_t> shape_of;    // combination -> shape id

    static PrototypeClassifier fit(const std::vector<ToySample>& data, const Vocabulary& vocab) {
        PrototypeClassifier c;
        const std::size_t combos = toy::combination_count();
        std::vector<std::size_t> counts(combos, 0);
        std::map<std::string, std::size_t> shape_ids;
        for (std::size_t i = 0; i < toy::shapes().size(); ++i)
            shape_ids[toy::shapes()[i]] = i;
        c.prototypes.assign(combos, Tensor());
        c.shape_of.assign(combos, 0);
        for (const auto& s : data) {
            // recover the combination from the prompt tokens
            const std::string& shape_tok = vocab.tokens[static_cast<std::size_t>(s.tokens.ids[0])];
            const std::string& pos_tok = vocab.tokens[static_cast<std::size_t>(s.tokens.ids[1])];
            const std::string& shade_tok = vocab.tokens[static_cast<std::size_t>(s.tokens.ids[2])];
            std::size_t shape = shape_ids.at(shape_tok);
            std::size_t pos = pos_tok == "left" ? 0 : 1;
            std::size_t shade = shade_tok == "dark" ? 0 : 1;
            const std::size_t combo =
                shape * toy::positions().size() * toy::shades().size() + pos * toy::shades().size() +
                shade;
            if (c.prototypes[combo].numel() == 0)
                c.prototypes[combo] = Tensor(s.image.shape());
            c.prototypes[combo] = add(c.prototypes[combo], s.image);
            c.shape_of[combo] = shape;
            ++counts[combo];
        }
        for (std::size_t k = 0; k < combos; ++k)
            if (counts[k]) c.prototypes[k] = scale(c.prototypes[k], 1.0 / counts[k]);
        return c;
    }

    std::size_t classify_shape(const Tensor& image) const {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_shape = 0;
        for (std::size_t k = 0; k < prototypes.size(); ++k) {
            if (prototypes[k].numel() == 0) continue;
            const double d = l2_distance(image, prototypes[k]);
            if (d < best) {
                best = d;
                best_shape = shape_of[k];
            }
        }
        return best_shape;
    }
};

} // namespace ledit
