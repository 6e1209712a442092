#pragma once

#include <cmath>

#include "tensor.hpp"

namespace motia {

// Forward-process schedule. Arrays are double so cumulative identities hold
// to ~1e-12 regardless of the scalar type used by the model.
struct NoiseSchedule {
    int64_t steps = 0;                  // T
    std::vector<double> betas;          // beta_1..beta_T, index t-1
    std::vector<double> alphas;         // 1 - beta_t
    std::vector<double> alpha_bars;     // abar[t] for t=0..T, abar[0] = 1
    std::vector<double> posterior_betas;  // beta~_t, index t-1

    double beta(int64_t t) const { return betas[static_cast<size_t>(t - 1)]; }
    double alpha(int64_t t) const { return alphas[static_cast<size_t>(t - 1)]; }
    double alpha_bar(int64_t t) const { return alpha_bars[static_cast<size_t>(t)]; }
    double posterior_beta(int64_t t) const { return posterior_betas[static_cast<size_t>(t - 1)]; }

    // Eq. 2 posterior mean coefficients: mu~ = a * x_t + b * eps
    std::pair<double, double> posterior_mean_coeffs(int64_t t) const {
        double a = 1.0 / std::sqrt(alpha(t));
        double b = -(1.0 - alpha(t)) / (std::sqrt(1.0 - alpha_bar(t)) * std::sqrt(alpha(t)));
        return {a, b};
    }
};

inline NoiseSchedule make_linear_schedule(int64_t steps, double beta_start, double beta_end) {
    if (steps < 1) throw ConfigError("schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.steps = steps;
    s.betas.resize(static_cast<size_t>(steps));
    s.alphas.resize(static_cast<size_t>(steps));
    s.alpha_bars.resize(static_cast<size_t>(steps) + 1);
    s.posterior_betas.resize(static_cast<size_t>(steps));
    s.alpha_bars[0] = 1.0;
    for (int64_t t = 1; t <= steps; ++t) {
        double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
        double b = beta_start + (beta_end - beta_start) * frac;
        s.betas[static_cast<size_t>(t - 1)] = b;
        s.alphas[static_cast<size_t>(t - 1)] = 1.0 - b;
        s.alpha_bars[static_cast<size_t>(t)] =
            s.alpha_bars[static_cast<size_t>(t - 1)] * s.alphas[static_cast<size_t>(t - 1)];
        s.posterior_betas[static_cast<size_t>(t - 1)] =
            (1.0 - s.alpha_bars[static_cast<size_t>(t - 1)]) /
            (1.0 - s.alpha_bars[static_cast<size_t>(t)]) * b;
    }
    return s;
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; t = 0 returns x0 unchanged.
template <typename T>
Tensor<T> forward_noise(const Tensor<T>& x0, int64_t t, const Tensor<T>& eps,
                        const NoiseSchedule& sched) {
    check_same_shape(x0, eps, "forward_noise");
    if (t < 0 || t > sched.steps) throw InputError("forward_noise: t out of range");
    const double ab = sched.alpha_bar(t);
    const T ca = static_cast<T>(std::sqrt(ab));
    const T cb = static_cast<T>(std::sqrt(1.0 - ab));
    Tensor<T> out = Tensor<T>::zeros(x0.shape());
    const T* px = x0.data();
    const T* pe = eps.data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = ca * px[i] + cb * pe[i];
    return out;
}

// Predicted-x0 reverse update (Algorithm 2 form): deterministic when sigma=0.
// z may be an undefined tensor when sigma is zero.
template <typename T>
Tensor<T> ddim_step(const Tensor<T>& v_t, const Tensor<T>& eps_hat, int64_t t, int64_t t_prev,
                    double sigma, const Tensor<T>& z, const NoiseSchedule& sched) {
    check_same_shape(v_t, eps_hat, "ddim_step");
    if (!(t > t_prev && t_prev >= 0 && t <= sched.steps))
        throw InputError("ddim_step: need T >= t > t_prev >= 0");
    const double ab_t = sched.alpha_bar(t);
    const double ab_p = sched.alpha_bar(t_prev);
    if (sigma * sigma > 1.0 - ab_p + 1e-15)
        throw ConfigError("ddim_step: sigma^2 exceeds 1 - alpha_bar(t_prev)");
    if (sigma != 0.0) check_same_shape(v_t, z, "ddim_step (z)");

    // v_prev = sqrt(ab_p) * (v - sqrt(1-ab_t) e) / sqrt(ab_t) + sqrt(1-ab_p-s^2) e + s z
    const double c_v = std::sqrt(ab_p / ab_t);
    const double c_e = -std::sqrt(1.0 - ab_t) * std::sqrt(ab_p / ab_t) +
                       std::sqrt(std::max(0.0, 1.0 - ab_p - sigma * sigma));
    Tensor<T> out = Tensor<T>::zeros(v_t.shape());
    const T* pv = v_t.data();
    const T* pe = eps_hat.data();
    T* po = out.data();
    const T cv = static_cast<T>(c_v), ce = static_cast<T>(c_e);
    if (sigma == 0.0) {
        for (int64_t i = 0; i < out.numel(); ++i) po[i] = cv * pv[i] + ce * pe[i];
    } else {
        const T cs = static_cast<T>(sigma);
        const T* pz = z.data();
        for (int64_t i = 0; i < out.numel(); ++i) po[i] = cv * pv[i] + ce * pe[i] + cs * pz[i];
    }
    return out;
}

enum class SigmaMode { deterministic, ddpm };

// Inference-time subsequence of {1..T}, strictly decreasing, ending at 1,
// with one sigma per step. In ddpm mode the sigma is the posterior noise of
// the plan-adjacent pair, which collapses to sqrt(beta~_t) on a dense plan.
struct TimestepPlan {
    std::vector<int64_t> timesteps;
    std::vector<double> sigmas;
    SigmaMode mode = SigmaMode::deterministic;

    int64_t size() const { return static_cast<int64_t>(timesteps.size()); }
    int64_t t_at(int64_t k) const { return timesteps[static_cast<size_t>(k)]; }
    int64_t t_prev_at(int64_t k) const {
        return k + 1 < size() ? timesteps[static_cast<size_t>(k + 1)] : 0;
    }
    double sigma_at(int64_t k) const { return sigmas[static_cast<size_t>(k)]; }
};

inline TimestepPlan make_timestep_plan(const NoiseSchedule& sched, int64_t n_steps,
                                       SigmaMode mode = SigmaMode::deterministic) {
    if (n_steps < 1 || n_steps > sched.steps)
        throw ConfigError("timestep plan: need 1 <= n_steps <= T");
    TimestepPlan plan;
    plan.mode = mode;
    plan.timesteps.resize(static_cast<size_t>(n_steps));
    if (n_steps == 1) {
        plan.timesteps[0] = 1;  // contract: plan always ends at 1
    } else {
        for (int64_t k = 0; k < n_steps; ++k) {
            double v = 1.0 + static_cast<double>(sched.steps - 1) *
                                 static_cast<double>(n_steps - 1 - k) /
                                 static_cast<double>(n_steps - 1);
            plan.timesteps[static_cast<size_t>(k)] = static_cast<int64_t>(std::llround(v));
        }
    }
    plan.sigmas.assign(static_cast<size_t>(n_steps), 0.0);
    if (mode == SigmaMode::ddpm) {
        for (int64_t k = 0; k < n_steps; ++k) {
            int64_t t = plan.t_at(k), tp = plan.t_prev_at(k);
            double ab_t = sched.alpha_bar(t), ab_p = sched.alpha_bar(tp);
            double s2 = (1.0 - ab_p) / (1.0 - ab_t) * (1.0 - ab_t / ab_p);
            plan.sigmas[static_cast<size_t>(k)] = std::sqrt(std::max(0.0, s2));
        }
    }
    return plan;
}

}  // namespace motia
