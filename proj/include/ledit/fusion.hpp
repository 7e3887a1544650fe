#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ledit/adapter.hpp"
#include "ledit/denoiser.hpp"
#include "ledit/inversion.hpp"
#include "ledit/schedule.hpp"
#include "ledit/tensor.hpp"
#include "ledit/text_encoder.hpp"

namespace ledit {

/// Binary pixel-membership set A over the latent grid. Pixels inside A may
/// be edited; the complement must be preserved.
struct MaskRegion {
    std::size_t h = 0, w = 0;
    std::vector<std::uint8_t> in; // row-major, 1 = inside A

    static MaskRegion empty(std::size_t h, std::size_t w) {
        return MaskRegion{h, w, std::vector<std::uint8_t>(h * w, 0)};
    }
    static MaskRegion full(std::size_t h, std::size_t w) {
        return MaskRegion{h, w, std::vector<std::uint8_t>(h * w, 1)};
    }

    bool at(std::size_t y, std::size_t x) const { return in[y * w + x] != 0; }
    bool contains(std::size_t pixel) const { return in[pixel] != 0; }

    std::size_t count_in() const {
        std::size_t n = 0;
        for (auto v : in) n += v != 0;
        return n;
    }
    bool is_empty() const { return count_in() == 0; }
    bool is_full() const { return count_in() == in.size(); }

    void require_grid(std::size_t gh, std::size_t gw) const {
        if (h != gh || w != gw) throw ShapeError("mask does not match the latent grid");
    }
};

// MASK v1: line 1 = "MASK v1 <H> <W>", then H lines of W characters in {0,1}.
inline void mask_write(std::ostream& os, const MaskRegion& m) {
    os << "MASK v1 " << m.h << ' ' << m.w << '\n';
    for (std::size_t y = 0; y < m.h; ++y) {
        for (std::size_t x = 0; x < m.w; ++x) os << (m.at(y, x) ? '1' : '0');
        os << '\n';
    }
}

inline MaskRegion mask_read(std::istream& is) {
    std::string magic, version;
    std::size_t h = 0, w = 0;
    if (!(is >> magic >> version >> h >> w) || magic != "MASK" || version != "v1")
        throw IoError("not a MASK v1 stream");
    MaskRegion m{h, w, std::vector<std::uint8_t>(h * w, 0)};
    std::string line;
    std::getline(is, line); // consume the header newline
    for (std::size_t y = 0; y < h; ++y) {
        if (!std::getline(is, line) || line.size() < w)
            throw IoError("MASK: truncated at row " + std::to_string(y));
        for (std::size_t x = 0; x < w; ++x) {
            if (line[x] != '0' && line[x] != '1')
                throw IoError("MASK: invalid character at row " + std::to_string(y));
            m.in[y * w + x] = line[x] == '1';
        }
    }
    return m;
}

inline void mask_save(const std::string& path, const MaskRegion& m) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    mask_write(f, m);
}

inline MaskRegion mask_load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    return mask_read(f);
}

inline ExternalCondition condition_from_mask(const MaskRegion& m, ExternalCondition::Kind kind) {
    Tensor g({m.h, m.w});
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] = m.in[i] ? 1.0 : 0.0;
    return {std::move(g), kind};
}

// ---------------------------------------------------------------------------

enum class InversionKind { nti, di };

struct EditConfig {
    enum class InitMode { gaussian, source_noise, blend };

    InitMode init_mode = InitMode::gaussian;
    int interval_begin = 1;                               // fusion interval [a, b]
    int interval_end = std::numeric_limits<int>::max();   // clamped to T at run time
    std::vector<std::string> layer_sites;                 // empty = all self-attention layers
    double guidance = 7.5;
    double adapter_strength = 1.0;
    std::uint64_t seed = 0;
    bool share_noise_draw = true;  // one Gaussian draw for intermediate and target init
    bool verify_substitution = false;

    int clamped_end(int steps) const { return std::min(interval_end, steps); }
    bool in_interval(int t, int steps) const {
        return t >= interval_begin && t <= clamped_end(steps);
    }
    bool interval_empty() const { return interval_end == 0; }
};

inline const char* to_string(EditConfig::InitMode m) {
    switch (m) {
        case EditConfig::InitMode::gaussian: return "gaussian";
        case EditConfig::InitMode::source_noise: return "source_noise";
        default: return "blend";
    }
}

inline void validate(const EditConfig& c, int steps) {
    if (!(c.guidance >= 0.0)) throw ConfigError("edit: guidance must be >= 0");
    if (!(c.adapter_strength >= 0.0)) throw ConfigError("edit: adapter strength must be >= 0");
    // interval_end == 0 is the canonical empty interval (fusion disabled)
    if (!c.interval_empty() &&
        (c.interval_begin < 1 || c.interval_begin > c.clamped_end(steps)))
        throw ConfigError("edit: fusion interval must satisfy 1 <= a <= b <= T");
}

struct RegionStats {
    double mean_abs_in = 0.0;  // mean |edit - recon| over A
    double mean_abs_out = 0.0; // over the complement
    double l2_in = 0.0, l2_out = 0.0;
    std::size_t pixels_in = 0, pixels_out = 0;
};

inline RegionStats region_stats(const Tensor& edit, const Tensor& recon, const MaskRegion& A) {
    require_same_shape(edit, recon, "region_stats");
    const std::size_t c = edit.rank() == 3 ? edit.extent(2) : 1;
    RegionStats st;
    st.pixels_in = A.count_in();
    st.pixels_out = A.in.size() - st.pixels_in;
    double sa_in = 0, sa_out = 0, s2_in = 0, s2_out = 0;
    for (std::size_t p = 0; p < A.in.size(); ++p)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double d = edit[p * c + ch] - recon[p * c + ch];
            if (A.contains(p)) {
                sa_in += std::fabs(d);
                s2_in += d * d;
            } else {
                sa_out += std::fabs(d);
                s2_out += d * d;
            }
        }
    if (st.pixels_in) {
        sa_in /= static_cast<double>(st.pixels_in * c);
        st.l2_in = std::sqrt(s2_in / static_cast<double>(st.pixels_in * c));
    }
    if (st.pixels_out) {
        sa_out /= static_cast<double>(st.pixels_out * c);
        st.l2_out = std::sqrt(s2_out / static_cast<double>(st.pixels_out * c));
    }
    st.mean_abs_in = sa_in;
    st.mean_abs_out = sa_out;
    return st;
}

struct SubstitutionChecks {
    bool ran = false;
    bool maps_bitwise = true;     // eps-hat self-attention maps == cached t2i maps
    double stitch_max_err = 0.0;  // stitched rows vs stored branch rows (must be 0)
};

struct EditResult {
    Tensor target_image;                    // x_0^T
    std::optional<Tensor> intermediate_image;
    Tensor source_recon;                    // the reconstruction the edit is judged against
    std::optional<RegionStats> stats;
    std::uint64_t nfe = 0;
    SubstitutionChecks checks;
    bool degenerate_mask_warning = false;
    std::vector<std::vector<double>> nti_objective_traces; // forwarded from inversion
};

/// Bundles the immutable model pieces one editing session works with.
struct EditContext {
    const Denoiser& den;
    const NoiseSchedule& sched;
    const CausalTextEncoder& enc;
    const ConditionEncoder* adapter = nullptr; // required for the t2i pipelines
};

namespace detail {

/// Per-pixel stitch of two full-grid predictions by mask membership.
inline Tensor stitch_by_mask(const Tensor& in_region, const Tensor& out_region,
                             const MaskRegion& A) {
    require_same_shape(in_region, out_region, "stitch_by_mask");
    const std::size_t c = in_region.extent(2);
    Tensor out = out_region;
    for (std::size_t p = 0; p < A.in.size(); ++p)
        if (A.contains(p))
            for (std::size_t ch = 0; ch < c; ++ch) out[p * c + ch] = in_region[p * c + ch];
    return out;
}

/// The probability map a site computes from (q, k); matches the in-network
/// arithmetic operation for operation.
inline Tensor attention_probs(const Tensor& q, const Tensor& k) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    return softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d));
}

} // namespace detail

/// Parts of a masked noise prediction: both full-grid branch outputs and the
/// per-pixel stitch.
struct MaskedEps {
    Tensor stitched;
    Tensor in_region;   // editing branch
    Tensor out_region;  // preservation branch (eps-bar)
};

/// eps-bar: the source-faithful prediction - source prompt, self-attention
/// outputs replaced from the source cache, adapter features injected when
/// given. Uses the inversion's per-timestep nulls when present.
inline Tensor eps_bar(const EditContext& ctx, int t, const Tensor& x,
                      const PromptEmbedding& cond_src, const NullEmbedding& null_t,
                      const AdapterFeatures* feats, const AttentionCache& src_cache,
                      const GuidanceConfig& g, const std::vector<std::string>& sites) {
    HookSet hooks;
    hooks.replace(ReplaceMode::self_output, src_cache, sites);
    return ctx.den
        .predict_noise(ctx.sched.model_step[static_cast<std::size_t>(t)], x, cond_src, null_t, g,
                       feats, &hooks)
        .eps;
}

/// Masked prediction for the intermediate image: outside A the eps-bar
/// branch, inside A the plain target-prompt branch, both with the adapter
/// injected and evaluated on the full grid. Captures the in-region branch's
/// self-attention internals when t2i_capture is given.
inline MaskedEps masked_eps_intermediate(const EditContext& ctx, int t, const Tensor& x,
                                         const MaskRegion& A, const PromptEmbedding& cond_src,
                                         const PromptEmbedding& cond_tgt,
                                         const AdapterFeatures& feats,
                                         const AttentionCache& src_cache,
                                         const NullEmbedding& null_bar,
                                         const NullEmbedding& null_plain,
                                         const GuidanceConfig& g,
                                         const std::vector<std::string>& sites,
                                         AttentionCache* t2i_capture) {
    MaskedEps r;
    r.out_region = eps_bar(ctx, t, x, cond_src, null_bar, &feats, src_cache, g, sites);
    HookSet cap = HookSet::capture_self();
    auto in_pred = ctx.den.predict_noise(ctx.sched.model_step[static_cast<std::size_t>(t)], x,
                                         cond_tgt, null_plain, g, &feats,
                                         t2i_capture ? &cap : nullptr);
    if (t2i_capture) t2i_capture->merge(std::move(in_pred.cache));
    r.in_region = std::move(in_pred.eps);
    r.stitched = detail::stitch_by_mask(r.in_region, r.out_region, A);
    return r;
}

/// Masked prediction for the target image: outside A eps-bar, inside A the
/// eps-hat branch whose self-attention probability maps are pinned to the
/// intermediate pass (Q and K replaced from the t2i cache, live values).
inline MaskedEps masked_eps_target(const EditContext& ctx, int t, const Tensor& x,
                                   const MaskRegion& A, const PromptEmbedding& cond_src,
                                   const PromptEmbedding& cond_tgt, const AdapterFeatures& feats,
                                   const AttentionCache& src_cache,
                                   const AttentionCache& t2i_cache,
                                   const NullEmbedding& null_bar, const NullEmbedding& null_plain,
                                   const GuidanceConfig& g,
                                   const std::vector<std::string>& sites,
                                   SubstitutionChecks* checks = nullptr) {
    MaskedEps r;
    r.out_region = eps_bar(ctx, t, x, cond_src, null_bar, &feats, src_cache, g, sites);
    HookSet hooks;
    hooks.replace(ReplaceMode::self_qk, t2i_cache, sites);
    if (checks) hooks.capture(AttnKind::self_attn, /*with_maps=*/true, sites);
    auto in_pred = ctx.den.predict_noise(ctx.sched.model_step[static_cast<std::size_t>(t)], x,
                                         cond_tgt, null_plain, g, &feats, &hooks);
    r.in_region = std::move(in_pred.eps);
    if (checks) {
        checks->ran = true;
        for (const auto& [key, rec] : in_pred.cache) {
            const AttnRecord& src = t2i_cache.require(key);
            Tensor expected = detail::attention_probs(src.q, src.k);
            if (!rec.p || rec.p->numel() != expected.numel()) {
                checks->maps_bitwise = false;
                continue;
            }
            for (std::size_t i = 0; i < expected.numel(); ++i)
                if ((*rec.p)[i] != expected[i]) {
                    checks->maps_bitwise = false;
                    break;
                }
        }
    }
    r.stitched = detail::stitch_by_mask(r.in_region, r.out_region, A);
    if (checks) {
        const std::size_t c = r.stitched.extent(2);
        for (std::size_t p = 0; p < A.in.size(); ++p)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double want =
                    A.contains(p) ? r.in_region[p * c + ch] : r.out_region[p * c + ch];
                checks->stitch_max_err =
                    std::max(checks->stitch_max_err, std::fabs(r.stitched[p * c + ch] - want));
            }
    }
    return r;
}

/// The reconstruction the fused pipelines preserve outside A: DDIM from
/// x_T^S driven by eps-bar (no adapter). For a null-text inversion this
/// coincides with the optimized x-hat trajectory.
inline std::vector<Tensor> reconstruct_source(const EditContext& ctx, const InversionResult& inv,
                                              const PromptEmbedding& cond_src,
                                              const NullEmbedding& null_plain,
                                              const EditConfig& cfg) {
    const GuidanceConfig g{cfg.guidance};
    HookSet hooks;
    hooks.replace(ReplaceMode::self_output, inv.cache, cfg.layer_sites);
    return ddim_generate(
        ctx.den, inv.x_terminal(), cond_src,
        [&](int t) -> const NullEmbedding& { return inv.null_at(t, null_plain); }, g, ctx.sched,
        &hooks, nullptr);
}

struct IntermediateResult {
    std::vector<Tensor> trajectory; // [t] for t = 0..T
    AttentionCache cache;           // self-attention internals of the generation branch
    Tensor init_noise;              // the Gaussian draw x
};

/// Intermediate-image generation (the t2i step): initialize per init_mode,
/// then DDIM with the masked intermediate prediction inside the fusion
/// interval and a plain target-prompt prediction outside it. Self-attention
/// internals are cached at every step.
inline IntermediateResult generate_intermediate(const EditContext& ctx,
                                                const InversionResult& inv, const MaskRegion& A,
                                                const PromptEmbedding& cond_src,
                                                const PromptEmbedding& cond_tgt,
                                                const ExternalCondition& c, const EditConfig& cfg,
                                                RngStream& rng) {
    if (!ctx.adapter) throw ConfigError("intermediate generation requires a condition encoder");
    const auto& dcfg = ctx.den.config();
    A.require_grid(dcfg.grid_h, dcfg.grid_w);
    validate(cfg, ctx.sched.steps);
    const AdapterFeatures feats = ctx.adapter->encode(c, cfg.adapter_strength);
    const NullEmbedding null_plain = ctx.enc.null_embedding();
    const GuidanceConfig g{cfg.guidance};

    IntermediateResult res;
    res.init_noise = rng.gaussian_tensor({dcfg.grid_h, dcfg.grid_w, dcfg.channels});
    Tensor x;
    switch (cfg.init_mode) {
        case EditConfig::InitMode::gaussian: x = res.init_noise; break;
        case EditConfig::InitMode::source_noise: x = inv.x_terminal(); break;
        case EditConfig::InitMode::blend:
            x = detail::stitch_by_mask(res.init_noise, inv.x_terminal(), A);
            break;
    }
    res.trajectory.assign(static_cast<std::size_t>(ctx.sched.steps) + 1, Tensor());
    res.trajectory[static_cast<std::size_t>(ctx.sched.steps)] = x;
    for (int t = ctx.sched.steps; t >= 1; --t) {
        Tensor eps;
        if (cfg.in_interval(t, ctx.sched.steps)) {
            MaskedEps parts = masked_eps_intermediate(ctx, t, x, A, cond_src, cond_tgt, feats,
                                                      inv.cache, inv.null_at(t, null_plain),
                                                      null_plain, g, cfg.layer_sites, &res.cache);
            eps = std::move(parts.stitched);
        } else {
            HookSet cap = HookSet::capture_self();
            auto pred = ctx.den.predict_noise(ctx.sched.model_step[static_cast<std::size_t>(t)],
                                              x, cond_tgt, null_plain, g, &feats, &cap);
            res.cache.merge(std::move(pred.cache));
            eps = std::move(pred.eps);
        }
        x = ddim_step(x, eps, t, ctx.sched);
        res.trajectory[static_cast<std::size_t>(t) - 1] = x;
    }
    return res;
}

/// Target-image generation by fusion: x_T^T = 1_{A^c} x_T^S + 1_A x with the
/// shared Gaussian draw, then DDIM with the masked target prediction.
inline EditResult generate_target(const EditContext& ctx, const InversionResult& inv,
                                  const MaskRegion& A, const PromptEmbedding& cond_src,
                                  const PromptEmbedding& cond_tgt, const ExternalCondition& c,
                                  const AttentionCache& t2i_cache, const EditConfig& cfg,
                                  const Tensor& noise_draw) {
    if (!ctx.adapter) throw ConfigError("target generation requires a condition encoder");
    const auto& dcfg = ctx.den.config();
    A.require_grid(dcfg.grid_h, dcfg.grid_w);
    validate(cfg, ctx.sched.steps);
    const AdapterFeatures feats = ctx.adapter->encode(c, cfg.adapter_strength);
    const NullEmbedding null_plain = ctx.enc.null_embedding();
    const GuidanceConfig g{cfg.guidance};

    EditResult res;
    res.degenerate_mask_warning = A.is_full();
    Tensor x = detail::stitch_by_mask(noise_draw, inv.x_terminal(), A);
    for (int t = ctx.sched.steps; t >= 1; --t) {
        Tensor eps;
        if (cfg.in_interval(t, ctx.sched.steps)) {
            MaskedEps parts = masked_eps_target(ctx, t, x, A, cond_src, cond_tgt, feats,
                                                inv.cache, t2i_cache,
                                                inv.null_at(t, null_plain), null_plain, g,
                                                cfg.layer_sites,
                                                cfg.verify_substitution ? &res.checks : nullptr);
            eps = std::move(parts.stitched);
        } else {
            eps = ctx.den
                      .predict_noise(ctx.sched.model_step[static_cast<std::size_t>(t)], x,
                                     cond_tgt, null_plain, g, &feats, nullptr)
                      .eps;
        }
        x = ddim_step(x, eps, t, ctx.sched);
    }
    res.target_image = std::move(x);
    return res;
}

/// The full mask-informed self-attention fusion pipeline: inversion (null-text
/// or direct), intermediate generation under the external condition, then
/// target generation fusing the cached self-attention states.
inline EditResult masafusion_edit(const EditContext& ctx, const Tensor& x0,
                                  const PromptEmbedding& cond_src, const PromptEmbedding& cond_tgt,
                                  const MaskRegion& A, const ExternalCondition& c,
                                  InversionKind kind, const EditConfig& cfg,
                                  const NtiConfig& nti = {}) {
    const std::uint64_t evals0 = ctx.den.eval_count();
    const NullEmbedding null_plain = ctx.enc.null_embedding();
    InversionResult inv =
        kind == InversionKind::nti
            ? null_text_inversion(ctx.den, x0, cond_src, null_plain, nti, ctx.sched)
            : direct_inversion(ctx.den, x0, cond_src, null_plain, ctx.sched, cfg.guidance);

    RngStream rng(cfg.seed);
    IntermediateResult inter = generate_intermediate(ctx, inv, A, cond_src, cond_tgt, c, cfg, rng);
    const Tensor target_noise =
        cfg.share_noise_draw ? inter.init_noise
                             : rng.gaussian_tensor({ctx.den.config().grid_h,
                                                    ctx.den.config().grid_w,
                                                    ctx.den.config().channels});
    EditResult res = generate_target(ctx, inv, A, cond_src, cond_tgt, c, inter.cache, cfg,
                                     target_noise);
    res.intermediate_image = inter.trajectory[0];
    res.source_recon = reconstruct_source(ctx, inv, cond_src, null_plain, cfg)[0];
    res.stats = region_stats(res.target_image, res.source_recon, A);
    res.nti_objective_traces = std::move(inv.objective_traces);
    res.nfe = ctx.den.eval_count() - evals0;
    return res;
}

/// The adapter-free fusion variant: one reconstruction pass from x_T^S
/// caches the source self-attention states (and doubles as the source
/// reconstruction), then the target is generated with Q-live/KV-cached
/// substitution inside A over the fusion interval, plain target-prompt
/// prediction elsewhere.
inline EditResult edit_without_adapter(const EditContext& ctx, const Tensor& x0,
                                       const PromptEmbedding& cond_src,
                                       const PromptEmbedding& cond_tgt, const MaskRegion& A,
                                       InversionKind kind, const EditConfig& cfg,
                                       const NtiConfig& nti = {}) {
    const auto& dcfg = ctx.den.config();
    A.require_grid(dcfg.grid_h, dcfg.grid_w);
    validate(cfg, ctx.sched.steps);
    const std::uint64_t evals0 = ctx.den.eval_count();
    const NullEmbedding null_plain = ctx.enc.null_embedding();
    InversionResult inv =
        kind == InversionKind::nti
            ? null_text_inversion(ctx.den, x0, cond_src, null_plain, nti, ctx.sched)
            : direct_inversion(ctx.den, x0, cond_src, null_plain, ctx.sched, cfg.guidance);
    const GuidanceConfig g{cfg.guidance};

    // reconstruction pass: caches {Q^S, K^S, V^S} along the trajectory the
    // fusion will preserve
    AttentionCache rec_cache;
    HookSet cap = HookSet::capture_self();
    std::vector<Tensor> recon = ddim_generate(
        ctx.den, inv.x_terminal(), cond_src,
        [&](int t) -> const NullEmbedding& { return inv.null_at(t, null_plain); }, g, ctx.sched,
        &cap, &rec_cache);

    EditResult res;
    res.degenerate_mask_warning = A.is_full();
    Tensor x = inv.x_terminal();
    for (int t = ctx.sched.steps; t >= 1; --t) {
        Tensor eps;
        if (cfg.in_interval(t, ctx.sched.steps)) {
            Tensor out_region = eps_bar(ctx, t, x, cond_src, inv.null_at(t, null_plain), nullptr,
                                        rec_cache, g, cfg.layer_sites);
            HookSet hooks;
            hooks.replace(ReplaceMode::self_kv, rec_cache, cfg.layer_sites);
            Tensor in_region =
                ctx.den
                    .predict_noise(ctx.sched.model_step[static_cast<std::size_t>(t)], x, cond_tgt,
                                   null_plain, g, nullptr, &hooks)
                    .eps;
            eps = detail::stitch_by_mask(in_region, out_region, A);
        } else {
            eps = ctx.den
                      .predict_noise(ctx.sched.model_step[static_cast<std::size_t>(t)], x,
                                     cond_tgt, null_plain, g, nullptr, nullptr)
                      .eps;
        }
        x = ddim_step(x, eps, t, ctx.sched);
    }
    res.target_image = std::move(x);
    res.source_recon = recon[0];
    res.stats = region_stats(res.target_image, res.source_recon, A);
    res.nti_objective_traces = std::move(inv.objective_traces);
    res.nfe = ctx.den.eval_count() - evals0;
    return res;
}

/// Embedding-splice editing: invert, build the spliced target embedding
/// (edited token rows from the target prompt, all other rows from the
/// source), then plain DDIM from x_T^S - no attention substitution.
inline EditResult embctrl_edit(const EditContext& ctx, const Tensor& x0,
                               const TokenSequence& src_tokens, const TokenSequence& tgt_tokens,
                               const std::set<std::size_t>& edited, InversionKind kind,
                               const EditConfig& cfg, const NtiConfig& nti = {},
                               const MaskRegion* report_mask = nullptr) {
    if (src_tokens.length() != tgt_tokens.length())
        throw ContractError("embctrl: token sequences must have equal length");
    const std::uint64_t evals0 = ctx.den.eval_count();
    const PromptEmbedding cond_src = ctx.enc.encode(src_tokens);
    const PromptEmbedding cond_tgt = ctx.enc.encode(tgt_tokens);
    const NullEmbedding null_plain = ctx.enc.null_embedding();
    validate(cfg, ctx.sched.steps);

    InversionResult inv =
        kind == InversionKind::nti
            ? null_text_inversion(ctx.den, x0, cond_src, null_plain, nti, ctx.sched)
            : direct_inversion(ctx.den, x0, cond_src, null_plain, ctx.sched, cfg.guidance);

    const PromptEmbedding spliced = splice_embedding(cond_src, cond_tgt, edited);
    const GuidanceConfig g{cfg.guidance};
    auto null_at = [&](int t) -> const NullEmbedding& { return inv.null_at(t, null_plain); };

    std::vector<Tensor> gen =
        ddim_generate(ctx.den, inv.x_terminal(), spliced, null_at, g, ctx.sched);
    std::vector<Tensor> recon =
        ddim_generate(ctx.den, inv.x_terminal(), cond_src, null_at, g, ctx.sched);

    EditResult res;
    res.target_image = gen[0];
    res.source_recon = recon[0];
    if (report_mask) res.stats = region_stats(res.target_image, res.source_recon, *report_mask);
    res.nti_objective_traces = std::move(inv.objective_traces);
    res.nfe = ctx.den.eval_count() - evals0;
    return res;
}

} // namespace ledit
