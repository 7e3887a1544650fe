#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ledit/denoiser.hpp"
#include "ledit/schedule.hpp"
#include "ledit/tape.hpp"
#include "ledit/tensor.hpp"
#include "ledit/text_encoder.hpp"

namespace ledit {

/// Hyperparameters of the null-embedding optimization. The defaults are the
/// reference setting (N = 10, eta = 2e-4, generation guidance 7.5).
struct NtiConfig {
    int inner_steps = 10;
    double eta = 2e-4;
    double guidance = 7.5;
};

inline void validate(const NtiConfig& c) {
    if (c.inner_steps < 1) throw ConfigError("nti: inner_steps must be >= 1");
    if (!(c.eta > 0.0)) throw ConfigError("nti: eta must be > 0");
    if (!(c.guidance >= 0.0)) throw ConfigError("nti: guidance must be >= 0");
}

struct InversionKindTag {
    enum Kind { plain, nti, di } kind = plain;
};

/// Everything an editing pipeline needs from an inversion run.
struct InversionResult {
    std::vector<Tensor> trajectory;  // x_0 .. x_T from the w=1 inversion pass
    std::optional<std::vector<NullEmbedding>> null_schedule; // [t-1] for t = 1..T, NTI only
    AttentionCache cache;            // self-attention internals for the fusion step
    std::uint64_t nfe = 0;           // guided denoiser evaluations, inner loops included
    std::vector<std::vector<double>> objective_traces; // NTI: per t (index t-1), inner objectives
    std::vector<std::string> notes;  // divergence-policy events
    InversionKindTag::Kind kind = InversionKindTag::plain;

    const Tensor& x_terminal() const { return trajectory.back(); }

    const NullEmbedding& null_at(int t, const NullEmbedding& fallback) const {
        if (!null_schedule) return fallback;
        return (*null_schedule)[static_cast<std::size_t>(t) - 1];
    }
};

/// Plain DDIM inversion at w = 1: iterate the inverse step with the noise
/// prediction taken at the previous (less noisy) latent. nfe = T.
inline InversionResult ddim_inversion(const Denoiser& den, const Tensor& x0,
                                      const PromptEmbedding& cond, const NullEmbedding& null,
                                      const NoiseSchedule& s) {
    InversionResult res;
    res.kind = InversionKindTag::plain;
    res.trajectory.reserve(static_cast<std::size_t>(s.steps) + 1);
    res.trajectory.push_back(x0);
    const GuidanceConfig w1{1.0};
    const std::uint64_t evals0 = den.eval_count();
    for (int t = 1; t <= s.steps; ++t) {
        auto pred = den.predict_noise(s.model_step[static_cast<std::size_t>(t)],
                                      res.trajectory.back(), cond, null, w1);
        res.trajectory.push_back(ddim_invert_step(res.trajectory.back(), pred.eps, t, s));
    }
    res.nfe = den.eval_count() - evals0;
    return res;
}

/// Plain DDIM generation from x_T with a per-timestep null provider; returns
/// the full trajectory x_T .. x_0 (stored as trajectory[t]).
template <typename NullAt>
inline std::vector<Tensor> ddim_generate(const Denoiser& den, const Tensor& x_terminal,
                                         const PromptEmbedding& cond, NullAt&& null_at,
                                         const GuidanceConfig& g, const NoiseSchedule& s,
                                         const HookSet* hooks = nullptr,
                                         AttentionCache* cache = nullptr) {
    std::vector<Tensor> traj(static_cast<std::size_t>(s.steps) + 1);
    traj[static_cast<std::size_t>(s.steps)] = x_terminal;
    for (int t = s.steps; t >= 1; --t) {
        auto pred = den.predict_noise(s.model_step[static_cast<std::size_t>(t)],
                                      traj[static_cast<std::size_t>(t)], cond, null_at(t), g,
                                      nullptr, hooks);
        if (cache) cache->merge(std::move(pred.cache));
        traj[static_cast<std::size_t>(t) - 1] =
            ddim_step(traj[static_cast<std::size_t>(t)], pred.eps, t, s);
    }
    return traj;
}

namespace detail {

/// One evaluation of the null-text objective
///   || x_prev_pivot - DDIM(eps_theta(t, x_hat, C, null)) ||^2
/// with the gradient w.r.t. the null embedding.
struct NtiProbe {
    double objective = 0.0;
    Tensor grad;
};

inline NtiProbe nti_objective_grad(const Denoiser& den, const NoiseSchedule& s, int t,
                                   const Tensor& x_hat, const Tensor& pivot_prev,
                                   const PromptEmbedding& cond, const Tensor& null_matrix,
                                   double w, bool want_grad) {
    GradientTape tape;
    Var xv = tape.constant(den.flatten_latent(x_hat));
    Var cv = tape.constant(cond.matrix);
    Var nv = tape.input(null_matrix, want_grad);
    Var eps = den.forward_pair(tape, s.model_step[static_cast<std::size_t>(t)], xv, cv, nv, w,
                               nullptr, nullptr, nullptr);
    Var xprev = tape.affine(xv, s.coef_a(t), eps, s.coef_b(t));
    Var diff = tape.sub(tape.constant(den.flatten_latent(pivot_prev)), xprev);
    Var obj = tape.sum(tape.mul(diff, diff));
    NtiProbe probe;
    probe.objective = tape.value(obj)[0];
    if (want_grad) {
        tape.backward(obj);
        probe.grad = tape.grad(nv);
    }
    return probe;
}

} // namespace detail

/// Null-text inversion: pivot trajectory at w = 1, then per timestep N
/// gradient steps on the null embedding against the pivot, warm-starting
/// each timestep from the previous one. The final forward of every timestep
/// advances x_hat and captures the self-attention cache.
///
/// Divergence policy: three consecutive objective increases halve eta for
/// that timestep and restart its inner loop once; the event is recorded in
/// `notes`. A non-finite objective raises DivergenceError naming the step.
inline InversionResult null_text_inversion(const Denoiser& den, const Tensor& x0,
                                           const PromptEmbedding& cond,
                                           const NullEmbedding& initial_null,
                                           const NtiConfig& cfg, const NoiseSchedule& s) {
    validate(cfg);
    if (!x0.all_finite()) throw InputError("nti: non-finite source latent");
    const std::uint64_t evals0 = den.eval_count();
    InversionResult res = ddim_inversion(den, x0, cond, initial_null, s);
    res.kind = InversionKindTag::nti;
    res.objective_traces.assign(static_cast<std::size_t>(s.steps), {});
    res.null_schedule.emplace(static_cast<std::size_t>(s.steps),
                              NullEmbedding{initial_null.matrix});

    const GuidanceConfig g{cfg.guidance};
    Tensor x_hat = res.x_terminal();
    NullEmbedding current{initial_null.matrix};
    HookSet capture = HookSet::capture_self();

    for (int t = s.steps; t >= 1; --t) {
        const Tensor& pivot_prev = res.trajectory[static_cast<std::size_t>(t) - 1];
        double eta = cfg.eta;
        bool restarted = false;

        for (;;) {
            std::vector<double>& trace = res.objective_traces[static_cast<std::size_t>(t) - 1];
            trace.clear();
            Tensor null_matrix = current.matrix;
            int rises = 0;
            bool diverged = false;
            for (int j = 0; j < cfg.inner_steps; ++j) {
                detail::NtiProbe probe;
                try {
                    probe = detail::nti_objective_grad(den, s, t, x_hat, pivot_prev, cond,
                                                       null_matrix, cfg.guidance, true);
                } catch (const InputError&) {
                    // a blown-up null embedding propagated non-finite values
                    // into the network before the objective could be summed
                    throw DivergenceError("nti objective non-finite at t=" + std::to_string(t));
                }
                if (!std::isfinite(probe.objective))
                    throw DivergenceError("nti objective non-finite at t=" + std::to_string(t));
                if (!trace.empty() && probe.objective > trace.back()) {
                    if (++rises >= 3 && !restarted) {
                        diverged = true;
                        break;
                    }
                } else {
                    rises = 0;
                }
                trace.push_back(probe.objective);
                null_matrix = affine(null_matrix, 1.0, probe.grad, -eta);
            }
            if (diverged) {
                restarted = true;
                eta *= 0.5;
                res.notes.push_back("t=" + std::to_string(t) +
                                    ": objective rose 3x, halved eta to " + std::to_string(eta));
                continue;
            }
            current.matrix = std::move(null_matrix);
            break;
        }

        // carry step: advance x_hat with the tuned null and record the cache
        auto pred = den.predict_noise(s.model_step[static_cast<std::size_t>(t)], x_hat, cond,
                                      current, g, nullptr, &capture);
        for (auto& [key, rec] : pred.cache) res.cache.put(key, std::move(rec));
        Tensor x_next = ddim_step(x_hat, pred.eps, t, s);
        res.objective_traces[static_cast<std::size_t>(t) - 1].push_back(
            squared_norm(sub(pivot_prev, x_next)));
        (*res.null_schedule)[static_cast<std::size_t>(t) - 1] = current;
        x_hat = std::move(x_next);
    }
    res.nfe = den.eval_count() - evals0;
    return res;
}

/// Direct inversion: skip the optimization, run one generation-scale pass per
/// timestep at the pivot states and cache the self-attention internals.
/// nfe = 2T. The null embedding is left untouched.
inline InversionResult direct_inversion(const Denoiser& den, const Tensor& x0,
                                        const PromptEmbedding& cond, const NullEmbedding& null,
                                        const NoiseSchedule& s, double guidance = 7.5) {
    const std::uint64_t evals0 = den.eval_count();
    InversionResult res = ddim_inversion(den, x0, cond, null, s);
    res.kind = InversionKindTag::di;
    const GuidanceConfig g{guidance};
    HookSet capture = HookSet::capture_self();
    for (int t = s.steps; t >= 1; --t) {
        auto pred = den.predict_noise(s.model_step[static_cast<std::size_t>(t)],
                                      res.trajectory[static_cast<std::size_t>(t)], cond, null, g,
                                      nullptr, &capture);
        for (auto& [key, rec] : pred.cache) res.cache.put(key, std::move(rec));
    }
    res.nfe = den.eval_count() - evals0;
    return res;
}

} // namespace ledit
