#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ledit/tensor.hpp"

namespace ledit {

/// Classifier-free guidance scale.
struct GuidanceConfig {
    double w = 7.5;
};

inline void validate(const GuidanceConfig& g) {
    if (!(g.w >= 0.0)) throw ConfigError("guidance scale must be >= 0");
}

/// The alpha-bar sequence: alpha_bar[0] = 1 exactly, strictly decreasing,
/// alpha_bar[T] <= 1e-2. model_step maps a schedule step onto the timestep id
/// the denoiser was trained with, so a short inference schedule can ride on a
/// longer base schedule.
struct NoiseSchedule {
    int steps = 0;                      // T
    std::vector<double> alpha_bar;      // size T+1
    std::vector<int> model_step;        // size T+1, model_step[0] == 0

    double sqrt_ab(int t) const { return std::sqrt(alpha_bar[static_cast<std::size_t>(t)]); }
    double sqrt_one_minus_ab(int t) const {
        return std::sqrt(1.0 - alpha_bar[static_cast<std::size_t>(t)]);
    }

    void require_step(int t) const {
        if (t < 1 || t > steps) throw StepError("timestep out of range");
    }

    /// DDIM update x_{t-1} = a(t) x_t + b(t) eps in x0-prediction form.
    double coef_a(int t) const { return sqrt_ab(t - 1) / sqrt_ab(t); }
    double coef_b(int t) const {
        return sqrt_one_minus_ab(t - 1) - sqrt_ab(t - 1) * sqrt_one_minus_ab(t) / sqrt_ab(t);
    }
};

inline void validate(const NoiseSchedule& s) {
    if (s.steps < 1 || s.alpha_bar.size() != static_cast<std::size_t>(s.steps) + 1 ||
        s.model_step.size() != s.alpha_bar.size())
        throw ConfigError("schedule: inconsistent lengths");
    if (s.alpha_bar[0] != 1.0) throw ConfigError("schedule: alpha_bar[0] must be 1");
    for (int t = 1; t <= s.steps; ++t) {
        const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
        if (!(ab > 0.0 && ab < s.alpha_bar[static_cast<std::size_t>(t) - 1]))
            throw ConfigError("schedule: alpha_bar must be strictly decreasing in (0, 1]");
    }
    if (s.alpha_bar.back() > 1e-2) throw ConfigError("schedule: terminal alpha_bar above 1e-2");
}

/// Linear-beta schedule: beta_s interpolates beta_min..beta_max over s=1..T,
/// alpha_bar_t = prod_{s<=t} (1 - beta_s).
inline NoiseSchedule make_schedule(int steps, double beta_min, double beta_max) {
    if (steps < 2) throw ConfigError("make_schedule: need at least 2 steps");
    if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0))
        throw ConfigError("make_schedule: need 0 < beta_min < beta_max < 1");
    NoiseSchedule s;
    s.steps = steps;
    s.alpha_bar.resize(static_cast<std::size_t>(steps) + 1);
    s.model_step.resize(static_cast<std::size_t>(steps) + 1);
    s.alpha_bar[0] = 1.0;
    for (int t = 1; t <= steps; ++t) {
        const double beta =
            beta_min + (beta_max - beta_min) * static_cast<double>(t - 1) / (steps - 1);
        s.alpha_bar[static_cast<std::size_t>(t)] =
            s.alpha_bar[static_cast<std::size_t>(t) - 1] * (1.0 - beta);
        s.model_step[static_cast<std::size_t>(t)] = t;
    }
    validate(s);
    return s;
}

/// The default construction: endpoints 1e-4 and 2e-2 rescaled by 1000/T.
inline NoiseSchedule make_schedule_rescaled(int steps) {
    const double f = 1000.0 / steps;
    return make_schedule(steps, 1e-4 * f, 2e-2 * f);
}

/// Uniform-stride subsampling of a base schedule; the model_step entries keep
/// pointing at base-schedule timesteps so a denoiser trained on the base can
/// be driven with fewer function evaluations.
inline NoiseSchedule subsample_schedule(const NoiseSchedule& base, int steps) {
    if (steps < 1 || base.steps % steps != 0)
        throw ConfigError("subsample_schedule: steps must divide the base step count");
    const int stride = base.steps / steps;
    NoiseSchedule s;
    s.steps = steps;
    s.alpha_bar.resize(static_cast<std::size_t>(steps) + 1);
    s.model_step.resize(static_cast<std::size_t>(steps) + 1);
    for (int t = 0; t <= steps; ++t) {
        s.alpha_bar[static_cast<std::size_t>(t)] =
            base.alpha_bar[static_cast<std::size_t>(t * stride)];
        s.model_step[static_cast<std::size_t>(t)] =
            base.model_step[static_cast<std::size_t>(t * stride)];
    }
    validate(s);
    return s;
}

/// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.
inline Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
    if (t < 0 || t > s.steps) throw StepError("forward_diffuse: timestep out of range");
    require_same_shape(x0, eps, "forward_diffuse");
    return affine(x0, s.sqrt_ab(t), eps, s.sqrt_one_minus_ab(t));
}

/// w * eps_cond + (1 - w) * eps_null.
inline Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_null, const GuidanceConfig& g) {
    require_same_shape(eps_cond, eps_null, "cfg_combine");
    return affine(eps_cond, g.w, eps_null, 1.0 - g.w);
}

/// One deterministic DDIM step t -> t-1 in x0-prediction form:
///   x_{t-1} = sqrt(ab_{t-1}) (x_t - sqrt(1-ab_t) eps) / sqrt(ab_t)
///           + sqrt(1-ab_{t-1}) eps.
inline Tensor ddim_step(const Tensor& x_t, const Tensor& eps, int t, const NoiseSchedule& s) {
    s.require_step(t);
    require_same_shape(x_t, eps, "ddim_step");
    return affine(x_t, s.coef_a(t), eps, s.coef_b(t));
}

/// Exact algebraic inverse of ddim_step for the same eps:
///   x_t = (x_{t-1} - b(t) eps) / a(t).
inline Tensor ddim_invert_step(const Tensor& x_prev, const Tensor& eps, int t,
                               const NoiseSchedule& s) {
    s.require_step(t);
    require_same_shape(x_prev, eps, "ddim_invert_step");
    const double a = s.coef_a(t), b = s.coef_b(t);
    return affine(x_prev, 1.0 / a, eps, -b / a);
}

} // namespace ledit
