#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ledit/adapter.hpp"
#include "ledit/ops.hpp"
#include "ledit/rng.hpp"
#include "ledit/schedule.hpp"
#include "ledit/tape.hpp"
#include "ledit/tensor.hpp"
#include "ledit/text_encoder.hpp"

namespace ledit {

enum class Branch { conditional, unconditional };

inline const char* to_string(Branch b) {
    return b == Branch::conditional ? "cond" : "null";
}

enum class AttnKind { self_attn, cross_attn };

struct CacheKey {
    int t = 0;
    std::string site; // e.g. "enc0.self"
    Branch branch = Branch::conditional;

    bool operator<(const CacheKey& o) const {
        if (t != o.t) return t < o.t;
        if (site != o.site) return site < o.site;
        return static_cast<int>(branch) < static_cast<int>(o.branch);
    }
};

/// Q, K, V of one attention evaluation; the probability map is stored only
/// when a capture rule asks for it (it is recomputable from q and k, and the
/// recomputation is bit-identical because it reruns the same kernel on the
/// same operands).
struct AttnRecord {
    Tensor q, k, v;
    std::optional<Tensor> p;
};

/// Per-run record of attention internals, keyed by (timestep, layer site,
/// guidance branch). Immutable once the producing pass has finished.
class AttentionCache {
  public:
    void put(CacheKey key, AttnRecord rec) { entries_[std::move(key)] = std::move(rec); }

    bool has(const CacheKey& key) const { return entries_.count(key) != 0; }

    const AttnRecord* find(const CacheKey& key) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? nullptr : &it->second;
    }

    const AttnRecord& require(const CacheKey& key) const {
        const AttnRecord* r = find(key);
        if (!r)
            throw HookError("missing cache entry t=" + std::to_string(key.t) + " site=" + key.site +
                            " branch=" + to_string(key.branch));
        return *r;
    }

    void merge(AttentionCache&& other) {
        for (auto& [k, v] : other.entries_) entries_[k] = std::move(v);
        other.entries_.clear();
    }

    std::size_t size() const { return entries_.size(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

  private:
    std::map<CacheKey, AttnRecord> entries_;
};

/// The five substitution semantics applied at an attention site.
enum class ReplaceMode {
    self_output, // Attention_SA from the cached pass verbatim (q,k,v all cached)
    self_kv,     // Attention_SA(Q_live, K_cached, V_cached)
    self_qk,     // cached probability map applied to the live values
    cross_qk     // same as self_qk at cross-attention sites
};

inline bool applies_to_self(ReplaceMode m) { return m != ReplaceMode::cross_qk; }

struct ReplaceRule {
    ReplaceMode mode;
    const AttentionCache* source = nullptr;
    int t_begin = 0, t_end = 1 << 30;     // inclusive model-step range
    std::vector<std::string> sites;       // empty = every site of the matching kind
};

struct CaptureRule {
    AttnKind kind;
    int t_begin = 0, t_end = 1 << 30;
    std::vector<std::string> sites; // empty = every site of this kind
    bool with_maps = false;
};

/// Capture and substitution directives for one denoiser pass. At most one
/// replace directive may match a given (t, site); the directives apply
/// identically to both guidance branches, each branch reading its own
/// branch's cache entries.
struct HookSet {
    std::vector<CaptureRule> captures;
    std::vector<ReplaceRule> replaces;

    HookSet& capture(AttnKind kind, bool with_maps = false,
                     std::vector<std::string> sites = {}) {
        captures.push_back(CaptureRule{kind, 0, 1 << 30, std::move(sites), with_maps});
        return *this;
    }

    HookSet& replace(ReplaceMode mode, const AttentionCache& src,
                     std::vector<std::string> sites = {}, int t_begin = 0, int t_end = 1 << 30) {
        replaces.push_back(ReplaceRule{mode, &src, t_begin, t_end, std::move(sites)});
        return *this;
    }

    static HookSet capture_self(bool with_maps = false) {
        return HookSet{}.capture(AttnKind::self_attn, with_maps);
    }

    static HookSet capture_all(bool with_maps = false) {
        HookSet h;
        h.capture(AttnKind::self_attn, with_maps).capture(AttnKind::cross_attn, with_maps);
        return h;
    }

    const ReplaceRule* find_replace(int t, const std::string& site, AttnKind kind) const {
        const ReplaceRule* found = nullptr;
        for (const auto& r : replaces) {
            const bool kind_ok = (kind == AttnKind::self_attn) ? applies_to_self(r.mode)
                                                               : (r.mode == ReplaceMode::cross_qk);
            if (!kind_ok || t < r.t_begin || t > r.t_end) continue;
            if (!r.sites.empty() &&
                std::find(r.sites.begin(), r.sites.end(), site) == r.sites.end())
                continue;
            if (found) throw HookError("multiple replace directives at t=" + std::to_string(t) +
                                       " site=" + site);
            found = &r;
        }
        return found;
    }

    bool wants_capture(int t, const std::string& site, AttnKind kind, bool* with_maps) const {
        for (const auto& c : captures) {
            if (c.kind != kind || t < c.t_begin || t > c.t_end) continue;
            if (!c.sites.empty() &&
                std::find(c.sites.begin(), c.sites.end(), site) == c.sites.end())
                continue;
            if (with_maps) *with_maps = c.with_maps;
            return true;
        }
        return false;
    }
};

// ---------------------------------------------------------------------------
// Architecture
// ---------------------------------------------------------------------------

struct DenoiserConfig {
    std::size_t grid_h = 16, grid_w = 16, channels = 4;
    std::vector<std::size_t> stage_widths = {16, 32, 48}; // last entry is the mid width
    std::size_t cross_dim = 16;
    int base_steps = 100;
    std::size_t mlp_ratio = 2;

    std::size_t stages() const { return stage_widths.size() - 1; }
    std::size_t pixels() const { return grid_h * grid_w; }

    struct BlockRef {
        std::string path;   // "enc0", "mid", "dec1", ...
        std::size_t level;  // 0 = full resolution
        bool encoder_side;
    };

    /// Blocks in forward order: encoder stages, mid, decoder stages.
    std::vector<BlockRef> blocks() const {
        std::vector<BlockRef> out;
        const std::size_t S = stages();
        for (std::size_t s = 0; s < S; ++s)
            out.push_back({"enc" + std::to_string(s), s, true});
        out.push_back({"mid", S, true});
        for (std::size_t s = S; s-- > 0;)
            out.push_back({"dec" + std::to_string(s), s, false});
        return out;
    }

    std::size_t level_h(std::size_t level) const { return grid_h >> level; }
    std::size_t level_w(std::size_t level) const { return grid_w >> level; }
    std::size_t width(std::size_t level) const { return stage_widths.at(level); }

    /// Adapter features are added on the encoder side only.
    std::vector<InjectionSite> injection_sites() const {
        std::vector<InjectionSite> out;
        for (const auto& b : blocks())
            if (b.encoder_side)
                out.push_back({b.path, level_h(b.level), level_w(b.level), width(b.level)});
        return out;
    }

    std::vector<std::string> self_attention_sites() const {
        std::vector<std::string> out;
        for (const auto& b : blocks()) out.push_back(b.path + ".self");
        return out;
    }

    std::vector<std::string> cross_attention_sites() const {
        std::vector<std::string> out;
        for (const auto& b : blocks()) out.push_back(b.path + ".cross");
        return out;
    }

    void validate() const {
        if (stage_widths.empty()) throw ConfigError("denoiser: stage_widths empty");
        if (base_steps < 1) throw ConfigError("denoiser: base_steps < 1");
        const std::size_t S = stages();
        if ((grid_h >> S) << S != grid_h || (grid_w >> S) << S != grid_w ||
            (grid_h >> S) == 0 || (grid_w >> S) == 0)
            throw ConfigError("denoiser: grid not divisible by the downsampling stages");
    }
};

/// Named weight tensors. Kept as a flat map so checkpoints, the trainer's
/// leaf registration and test oracles all see the same catalogue.
struct DenoiserWeights {
    DenoiserConfig config;
    std::map<std::string, Tensor> tensors;

    const Tensor& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ConfigError("missing weight tensor: " + name);
        return it->second;
    }

    static DenoiserWeights init(DenoiserConfig cfg, std::uint64_t seed) {
        cfg.validate();
        DenoiserWeights w;
        w.config = cfg;
        RngStream rng(seed);
        auto mat = [&rng](std::size_t n, std::size_t m) {
            Tensor t({n, m});
            const double std = 1.0 / std::sqrt(static_cast<double>(n));
            for (std::size_t i = 0; i < t.numel(); ++i) t[i] = std * rng.gaussian();
            return t;
        };
        const std::size_t c0 = cfg.width(0);
        w.tensors["in.w"] = mat(cfg.channels, c0);
        w.tensors["in.b"] = Tensor({1, c0});
        Tensor tt({static_cast<std::size_t>(cfg.base_steps) + 1, c0});
        for (std::size_t i = 0; i < tt.numel(); ++i) tt[i] = 0.5 * rng.gaussian();
        w.tensors["time.table"] = std::move(tt);
        for (const auto& b : cfg.blocks()) {
            const std::size_t c = cfg.width(b.level);
            w.tensors[b.path + ".self.wq"] = mat(c, c);
            w.tensors[b.path + ".self.wk"] = mat(c, c);
            w.tensors[b.path + ".self.wv"] = mat(c, c);
            w.tensors[b.path + ".self.wo"] = mat(c, c);
            w.tensors[b.path + ".cross.wq"] = mat(c, c);
            w.tensors[b.path + ".cross.wk"] = mat(cfg.cross_dim, c);
            w.tensors[b.path + ".cross.wv"] = mat(cfg.cross_dim, c);
            w.tensors[b.path + ".cross.wo"] = mat(c, c);
            w.tensors[b.path + ".mlp.w1"] = mat(c, cfg.mlp_ratio * c);
            w.tensors[b.path + ".mlp.b1"] = Tensor({1, cfg.mlp_ratio * c});
            w.tensors[b.path + ".mlp.w2"] = mat(cfg.mlp_ratio * c, c);
        }
        for (std::size_t s = 0; s < cfg.stages(); ++s) {
            w.tensors["down" + std::to_string(s) + ".w"] = mat(cfg.width(s), cfg.width(s + 1));
            w.tensors["up" + std::to_string(s) + ".w"] = mat(cfg.width(s + 1), cfg.width(s));
        }
        // zero-initialized head so an untrained model predicts zero noise
        w.tensors["out.w"] = Tensor({c0, cfg.channels});
        w.tensors["out.b"] = Tensor({1, cfg.channels});
        return w;
    }
};

struct DenoisePrediction {
    Tensor eps;           // H x W x C
    AttentionCache cache; // whatever the hooks captured, both branches
};

/// The conditional noise-prediction network: an attention-centric UNet
/// analog with single-head self- and cross-attention at every resolution,
/// an additive adapter-feature input on the encoder side, and a hook
/// registry that captures or substitutes attention internals per
/// (timestep, layer, kind).
class Denoiser {
  public:
    explicit Denoiser(DenoiserWeights weights)
        : w_(std::move(weights)), evals_(std::make_shared<std::atomic<std::uint64_t>>(0)) {
        w_.config.validate();
    }

    const DenoiserConfig& config() const { return w_.config; }
    const DenoiserWeights& weights() const { return w_; }
    DenoiserWeights& mutable_weights() { return w_; }

    std::uint64_t eval_count() const { return evals_->load(); }

    /// Classifier-free guided prediction: w * eps(cond) + (1 - w) * eps(null).
    /// Hooks apply identically to both branches; captured entries land in the
    /// returned cache under their branch key. Counts as one evaluation.
    DenoisePrediction predict_noise(int model_t, const Tensor& x, const PromptEmbedding& cond,
                                    const NullEmbedding& null, const GuidanceConfig& g,
                                    const AdapterFeatures* feats = nullptr,
                                    const HookSet* hooks = nullptr) const {
        validate(g);
        GradientTape tape;
        Var xv = tape.constant(flatten_latent(x));
        Var cv = tape.constant(cond.matrix);
        Var nv = tape.constant(null.matrix);
        AttentionCache cache;
        Var eps = forward_pair(tape, model_t, xv, cv, nv, g.w, feats, hooks, &cache);
        return {unflatten_latent(tape.value(eps)), std::move(cache)};
    }

    /// Tape-level guided prediction for callers that need gradients (the
    /// null-text objective, training). Counts as one evaluation.
    Var forward_pair(GradientTape& tape, int model_t, Var x, Var cond, Var null, double w,
                     const AdapterFeatures* feats, const HookSet* hooks,
                     AttentionCache* cache) const {
        Var ec = forward_branch(tape, model_t, x, cond, Branch::conditional, feats, hooks, cache);
        Var en = forward_branch(tape, model_t, x, null, Branch::unconditional, feats, hooks, cache);
        evals_->fetch_add(1);
        return tape.affine(ec, w, en, 1.0 - w);
    }

    /// One branch of the network: x is the flattened latent (N x C), cond the
    /// conditioning matrix routed through cross-attention.
    Var forward_branch(GradientTape& tape, int model_t, Var x, Var cond, Branch branch,
                       const AdapterFeatures* feats, const HookSet* hooks,
                       AttentionCache* cache) const {
        return forward_impl(tape, weight_vars(tape), model_t, x, cond, branch, feats, hooks,
                            cache);
    }

    /// Same forward pass, but over caller-supplied weight variables (the
    /// trainer flags these differentiable).
    Var forward_with_weights(GradientTape& tape, const std::map<std::string, Var>& wv, int model_t,
                             Var x, Var cond, Branch branch) const {
        return forward_impl(tape, wv, model_t, x, cond, branch, nullptr, nullptr, nullptr);
    }

    void count_eval() const { evals_->fetch_add(1); }

    Tensor flatten_latent(const Tensor& x) const {
        const auto& c = w_.config;
        if (x.rank() != 3 || x.extent(0) != c.grid_h || x.extent(1) != c.grid_w ||
            x.extent(2) != c.channels)
            throw ShapeError("latent does not match the denoiser grid");
        return x.reshaped({c.pixels(), c.channels});
    }

    Tensor unflatten_latent(const Tensor& x) const {
        const auto& c = w_.config;
        return x.reshaped({c.grid_h, c.grid_w, c.channels});
    }

  private:
    std::map<std::string, Var> weight_vars(GradientTape& tape) const {
        std::map<std::string, Var> wv;
        for (const auto& [name, t] : w_.tensors) wv.emplace(name, tape.constant(t));
        return wv;
    }

    Var forward_impl(GradientTape& tape, const std::map<std::string, Var>& wv, int model_t, Var x,
                     Var cond, Branch branch, const AdapterFeatures* feats, const HookSet* hooks,
                     AttentionCache* cache) const {
        const auto& cfg = w_.config;
        if (model_t < 0 || model_t > cfg.base_steps)
            throw StepError("denoiser timestep out of range: " + std::to_string(model_t));
        Var h = tape.row_broadcast_add(tape.matmul(x, wv.at("in.w")), wv.at("in.b"));
        h = tape.row_broadcast_add(h, tape.select_row(wv.at("time.table"),
                                                      static_cast<std::size_t>(model_t)));
        std::vector<Var> skips;
        const std::size_t S = cfg.stages();
        for (std::size_t s = 0; s < S; ++s) {
            h = inject(tape, h, "enc" + std::to_string(s), feats);
            h = block(tape, wv, h, cond, "enc" + std::to_string(s), s, model_t, branch, hooks,
                      cache);
            skips.push_back(h);
            h = tape.matmul(tape.avg_pool_2x2(h, cfg.level_h(s), cfg.level_w(s)),
                            wv.at("down" + std::to_string(s) + ".w"));
        }
        h = inject(tape, h, "mid", feats);
        h = block(tape, wv, h, cond, "mid", S, model_t, branch, hooks, cache);
        for (std::size_t s = S; s-- > 0;) {
            h = tape.matmul(tape.upsample_2x2(h, cfg.level_h(s + 1), cfg.level_w(s + 1)),
                            wv.at("up" + std::to_string(s) + ".w"));
            h = tape.add(h, skips[s]);
            h = block(tape, wv, h, cond, "dec" + std::to_string(s), s, model_t, branch, hooks,
                      cache);
        }
        return tape.row_broadcast_add(tape.matmul(h, wv.at("out.w")), wv.at("out.b"));
    }

    Var inject(GradientTape& tape, Var h, const std::string& site,
               const AdapterFeatures* feats) const {
        if (!feats) return h;
        const Tensor* f = feats->find(site);
        if (!f) return h;
        if (!f->same_shape(tape.value(h)))
            throw ShapeError("adapter features do not match hidden state at " + site);
        return tape.add(h, tape.constant(*f));
    }

    Var block(GradientTape& tape, const std::map<std::string, Var>& wv, Var h, Var cond,
              const std::string& path, std::size_t level, int model_t, Branch branch,
              const HookSet* hooks, AttentionCache* cache) const {
        // self-attention
        {
            Var q = tape.matmul(h, wv.at(path + ".self.wq"));
            Var k = tape.matmul(h, wv.at(path + ".self.wk"));
            Var v = tape.matmul(h, wv.at(path + ".self.wv"));
            Var att = attend(tape, model_t, path + ".self", AttnKind::self_attn, branch, q, k, v,
                             hooks, cache);
            h = tape.add(h, tape.matmul(att, wv.at(path + ".self.wo")));
        }
        // cross-attention over the conditioning matrix
        {
            Var q = tape.matmul(h, wv.at(path + ".cross.wq"));
            Var k = tape.matmul(cond, wv.at(path + ".cross.wk"));
            Var v = tape.matmul(cond, wv.at(path + ".cross.wv"));
            Var att = attend(tape, model_t, path + ".cross", AttnKind::cross_attn, branch, q, k, v,
                             hooks, cache);
            h = tape.add(h, tape.matmul(att, wv.at(path + ".cross.wo")));
        }
        // pixelwise mlp
        Var z = tape.tanh(tape.row_broadcast_add(tape.matmul(h, wv.at(path + ".mlp.w1")),
                                                 wv.at(path + ".mlp.b1")));
        (void)level;
        return tape.add(h, tape.matmul(z, wv.at(path + ".mlp.w2")));
    }

    /// Attention at one site with the hook directives applied. The cache
    /// records the tensors the site actually used (post-substitution).
    Var attend(GradientTape& tape, int model_t, const std::string& site, AttnKind kind,
               Branch branch, Var q, Var k, Var v, const HookSet* hooks,
               AttentionCache* cache) const {
        const ReplaceRule* rule = hooks ? hooks->find_replace(model_t, site, kind) : nullptr;
        Var out, map;
        const AttnRecord* rec = nullptr;
        Var eff_q = q, eff_k = k, eff_v = v;
        if (!rule) {
            auto [o, m] = tape.attention(q, k, v);
            out = o;
            map = m;
        } else {
            rec = &rule->source->require(CacheKey{model_t, site, branch});
            switch (rule->mode) {
                case ReplaceMode::self_output: {
                    eff_q = tape.constant(rec->q);
                    eff_k = tape.constant(rec->k);
                    eff_v = tape.constant(rec->v);
                    auto [o, m] = tape.attention(eff_q, eff_k, eff_v);
                    out = o;
                    map = m;
                    break;
                }
                case ReplaceMode::self_kv: {
                    eff_k = tape.constant(rec->k);
                    eff_v = tape.constant(rec->v);
                    auto [o, m] = tape.attention(q, eff_k, eff_v);
                    out = o;
                    map = m;
                    break;
                }
                case ReplaceMode::self_qk:
                case ReplaceMode::cross_qk: {
                    eff_q = tape.constant(rec->q);
                    eff_k = tape.constant(rec->k);
                    auto [o, m] = tape.attention(eff_q, eff_k, v);
                    out = o;
                    map = m;
                    break;
                }
            }
        }
        bool with_maps = false;
        if (cache && hooks && hooks->wants_capture(model_t, site, kind, &with_maps)) {
            AttnRecord r;
            r.q = tape.value(eff_q);
            r.k = tape.value(eff_k);
            r.v = tape.value(eff_v);
            if (with_maps) r.p = tape.value(map);
            cache->put(CacheKey{model_t, site, branch}, std::move(r));
        }
        return out;
    }

    DenoiserWeights w_;
    std::shared_ptr<std::atomic<std::uint64_t>> evals_;
};

} // namespace ledit
