#pragma once

#include "denoiser.hpp"

namespace motia {

enum class AugmentKind { identity, horizontal_flip, crop_resize };

struct AugmentPolicy {
    double p_identity = 1.0;  // paper setting: no augmentation
    double p_flip = 0.0;
    double p_crop_resize = 0.0;

    void validate() const {
        if (p_identity < 0 || p_flip < 0 || p_crop_resize < 0 ||
            std::fabs(p_identity + p_flip + p_crop_resize - 1.0) > 1e-9)
            throw ConfigError("augment policy: probabilities must be >= 0 and sum to 1");
    }
};

struct AdaptConfig {
    int64_t iterations = 1000;
    double lr = 1e-4;
    double weight_decay = 1e-2;
    MarginLimits limits;
    AugmentPolicy augment_policy;
    int64_t clip_length = 16;
    int64_t rank = 16;
    float alpha_lora = 8.0f;
    bool masked_loss_only = false;
    uint64_t seed = 0;

    void validate() const {
        if (iterations < 0 || clip_length < 1 || rank < 1)
            throw ConfigError("adapt config: bad iterations/clip_length/rank");
        limits.validate();
        augment_policy.validate();
    }
};

namespace detail {

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& v) {
    const auto& s = v.shape();
    const int64_t t = s[0], c = s[1], h = s[2], w = s[3];
    Tensor<T> out = Tensor<T>::zeros(s);
    for (int64_t f = 0; f < t; ++f)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t y = 0; y < h; ++y) {
                const T* src = v.data() + ((f * c + ch) * h + y) * w;
                T* dst = out.data() + ((f * c + ch) * h + y) * w;
                for (int64_t x = 0; x < w; ++x) dst[x] = src[w - 1 - x];
            }
    return out;
}

// crop a sub-rectangle (>= 50% per side) and bilinearly resize back
template <typename T>
Tensor<T> crop_resize(const Tensor<T>& v, int64_t ch_, int64_t cw_, int64_t oy, int64_t ox) {
    const auto& s = v.shape();
    const int64_t t = s[0], c = s[1], h = s[2], w = s[3];
    Tensor<T> out = Tensor<T>::zeros(s);
    const double sy = static_cast<double>(ch_) / static_cast<double>(h);
    const double sx = static_cast<double>(cw_) / static_cast<double>(w);
    for (int64_t f = 0; f < t; ++f)
        for (int64_t chn = 0; chn < c; ++chn) {
            const T* src = v.data() + (f * c + chn) * h * w;
            T* dst = out.data() + (f * c + chn) * h * w;
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5 + static_cast<double>(oy);
                    double fx = (static_cast<double>(x) + 0.5) * sx - 0.5 + static_cast<double>(ox);
                    fy = std::min(std::max(fy, static_cast<double>(oy)),
                                  static_cast<double>(oy + ch_ - 1));
                    fx = std::min(std::max(fx, static_cast<double>(ox)),
                                  static_cast<double>(ox + cw_ - 1));
                    int64_t y0 = static_cast<int64_t>(std::floor(fy));
                    int64_t x0 = static_cast<int64_t>(std::floor(fx));
                    int64_t y1 = std::min(y0 + 1, oy + ch_ - 1);
                    int64_t x1 = std::min(x0 + 1, ox + cw_ - 1);
                    double wy = fy - static_cast<double>(y0), wx = fx - static_cast<double>(x0);
                    double val = (1 - wy) * (1 - wx) * static_cast<double>(src[y0 * w + x0]) +
                                 (1 - wy) * wx * static_cast<double>(src[y0 * w + x1]) +
                                 wy * (1 - wx) * static_cast<double>(src[y1 * w + x0]) +
                                 wy * wx * static_cast<double>(src[y1 * w + x1]);
                    dst[y * w + x] = static_cast<T>(val);
                }
        }
    return out;
}

}  // namespace detail

// One transform drawn per call; draws keyed by (stream, counter_base).
template <typename T>
Tensor<T> augment(const Tensor<T>& video, const AugmentPolicy& policy, const RngStream& rs,
                  uint64_t counter_base = 0) {
    policy.validate();
    double u = rs.uniform(counter_base);
    if (u <= policy.p_identity) return video;
    if (u <= policy.p_identity + policy.p_flip) return detail::flip_horizontal(video);
    const auto& s = video.shape();
    const int64_t h = s[2], w = s[3];
    int64_t ch_ = rs.uniform_int(counter_base + 1, (h + 1) / 2, h);
    int64_t cw_ = rs.uniform_int(counter_base + 2, (w + 1) / 2, w);
    int64_t oy = rs.uniform_int(counter_base + 3, 0, h - ch_);
    int64_t ox = rs.uniform_int(counter_base + 4, 0, w - cw_);
    return detail::crop_resize(video, ch_, cw_, oy, ox);
}

template <typename T>
Tensor<T> slice_frames(const Tensor<T>& v, int64_t start, int64_t len) {
    const auto& s = v.shape();
    check_shape(start >= 0 && len >= 1 && start + len <= s[0], "slice_frames: out of range");
    Tensor<T> out = Tensor<T>::zeros({len, s[1], s[2], s[3]});
    const int64_t frame = s[1] * s[2] * s[3];
    std::copy(v.data() + start * frame, v.data() + (start + len) * frame, out.data());
    return out;
}

// One Algorithm-1 iteration: augment -> mask -> noise -> optimize adapters.
// All draws derive from (cfg.seed, iteration), so runs replay exactly.
template <typename T>
T adaptation_step(const DenoiserNet<T>& net, AdapterSet<T>& adapters, const Tensor<T>& video,
                  const AdaptConfig& cfg, const NoiseSchedule& sched,
                  std::vector<Tensor<T>>& params, AdamState<T>& opt, int64_t iteration) {
    const uint64_t it = static_cast<uint64_t>(iteration);
    Tensor<T> source = video;
    if (video.shape()[0] > cfg.clip_length) {
        RngStream clip_rs(cfg.seed, "adapt/clip");
        int64_t start = clip_rs.uniform_int(it, 0, video.shape()[0] - cfg.clip_length);
        source = slice_frames(video, start, cfg.clip_length);
    }
    auto clip = augment(source, cfg.augment_policy, RngStream(cfg.seed, "adapt/aug"), 8 * it);
    const auto& s = clip.shape();
    auto bmask = random_boundary_mask(s[2], s[3], cfg.limits, RngStream(cfg.seed, "adapt/mask"), 4 * it);
    RngStream t_rs(cfg.seed, "adapt/t");
    int64_t t = t_rs.uniform_int(it, 1, sched.steps);
    auto eps = randn_stream<T>(s, RngStream(cfg.seed, "adapt/eps", it));

    for (auto& p : params) p.zero_grad();
    GradTape<T> tape;
    T loss_val;
    {
        TapeScope<T> scope(tape);
        auto v_noisy = forward_noise(clip, t, eps, sched);
        auto cond = make_condition(clip, bmask.mask);
        auto eps_hat = predict_noise(net, &adapters, v_noisy, cond, t, InsertionMode::full);
        Tensor<T> loss;
        if (cfg.masked_loss_only) {
            std::vector<T> wts(static_cast<size_t>(s[2] * s[3]));
            for (int64_t i = 0; i < s[2] * s[3]; ++i)
                wts[static_cast<size_t>(i)] = T(1) - static_cast<T>(bmask.mask.data()[i]);
            loss = weighted_mse_loss(eps_hat, eps, wts);
        } else {
            loss = mse_loss(eps_hat, eps);
        }
        loss_val = loss.item();
        if (!std::isfinite(static_cast<double>(loss_val)))
            throw NumericError("adaptation diverged: non-finite loss");
        tape.backward(loss);
    }
    adam_step(opt, params);
    return loss_val;
}

// Input-specific adaptation: freeze the base, train the low-rank adapters on
// the source's pseudo-outpainting task for cfg.iterations steps.
template <typename T>
std::pair<AdapterSet<T>, std::vector<T>> adapt(const DenoiserNet<T>& net, const Tensor<T>& video,
                                               const AdaptConfig& cfg, const NoiseSchedule& sched) {
    cfg.validate();
    check_shape(video.shape().size() == 4 && video.shape()[0] >= 1, "adapt: video must be [t,d,h,w]");
    net.set_requires_grad(false);
    auto adapters = init_adapters<T>(net.adapter_hosts(), cfg.rank, static_cast<T>(cfg.alpha_lora),
                                     cfg.seed);
    auto params = adapters.parameters();
    for (auto& p : params) p.set_requires_grad(true);
    AdamState<T> opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;
    opt.init(params);
    std::vector<T> trace;
    trace.reserve(static_cast<size_t>(cfg.iterations));
    for (int64_t i = 0; i < cfg.iterations; ++i)
        trace.push_back(adaptation_step(net, adapters, video, cfg, sched, params, opt, i));
    return {std::move(adapters), std::move(trace)};
}

// Held-out pseudo-outpainting loss: n fresh (mask, t, eps) draws keyed by
// eval_seed, forward-only. Calling twice with the same seed evaluates both
// models on identical draws, giving a paired comparison.
template <typename T>
T eval_pseudo_outpaint_loss(const DenoiserNet<T>& net, const AdapterSet<T>* adapters,
                            const Tensor<T>& video, const MarginLimits& limits,
                            const NoiseSchedule& sched, uint64_t eval_seed, int64_t n_evals) {
    const auto& s = video.shape();
    double total = 0;
    RngStream t_rs(eval_seed, "heldout/t");
    RngStream mask_rs(eval_seed, "heldout/mask");
    for (int64_t e = 0; e < n_evals; ++e) {
        const uint64_t ue = static_cast<uint64_t>(e);
        auto bmask = random_boundary_mask(s[2], s[3], limits, mask_rs, 4 * ue);
        int64_t t = t_rs.uniform_int(ue, 1, sched.steps);
        auto eps = randn_stream<T>(s, RngStream(eval_seed, "heldout/eps", ue));
        auto v_noisy = forward_noise(video, t, eps, sched);
        auto cond = make_condition(video, bmask.mask);
        auto eps_hat = predict_noise(net, adapters, v_noisy, cond, t, InsertionMode::full);
        auto loss = mse_loss(eps_hat, eps);
        total += static_cast<double>(loss.item());
    }
    return static_cast<T>(total / static_cast<double>(n_evals));
}

}  // namespace motia
