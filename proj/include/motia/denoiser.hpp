#pragma once

#include <functional>
#include <optional>

#include "adam.hpp"
#include "adapters.hpp"
#include "masks.hpp"
#include "ops.hpp"
#include "schedule.hpp"

namespace motia {

struct DenoiserConfig {
    int64_t width = 16;
    int64_t blocks = 2;
    int64_t embed_dim = 32;
    int64_t channels = 1;  // d
    int64_t groups = 4;
    uint64_t seed = 0;
};

// Mask-conditioned video denoiser: input projection over the concatenated
// (noisy, masked, mask) channels, residual conv blocks with 3D group norm and
// a timestep bias, one temporal mixing layer mid-stack, output projection.
template <typename T>
struct DenoiserNet {
    DenoiserConfig cfg;

    Tensor<T> in_kernel, in_bias;
    std::vector<Tensor<T>> block_kernels, block_biases;
    std::vector<Tensor<T>> gn_gains, gn_shifts;
    std::vector<Tensor<T>> temb_weights, temb_biases;
    Tensor<T> t_kernel, t_bias;
    Tensor<T> out_kernel, out_bias;

    // every named base parameter, in serialization order
    std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        out.emplace_back("in.kernel", in_kernel);
        out.emplace_back("in.bias", in_bias);
        for (int64_t b = 0; b < cfg.blocks; ++b) {
            std::string p = "block" + std::to_string(b) + ".";
            out.emplace_back(p + "kernel", block_kernels[static_cast<size_t>(b)]);
            out.emplace_back(p + "bias", block_biases[static_cast<size_t>(b)]);
            out.emplace_back(p + "gn_gain", gn_gains[static_cast<size_t>(b)]);
            out.emplace_back(p + "gn_shift", gn_shifts[static_cast<size_t>(b)]);
            out.emplace_back(p + "temb_weight", temb_weights[static_cast<size_t>(b)]);
            out.emplace_back(p + "temb_bias", temb_biases[static_cast<size_t>(b)]);
        }
        out.emplace_back("temporal.kernel", t_kernel);
        out.emplace_back("temporal.bias", t_bias);
        out.emplace_back("out.kernel", out_kernel);
        out.emplace_back("out.bias", out_bias);
        return out;
    }

    std::vector<Tensor<T>> parameters() const {
        std::vector<Tensor<T>> out;
        for (auto& [n, p] : named_parameters()) out.push_back(p);
        return out;
    }

    void set_requires_grad(bool v) const {
        for (auto& [n, p] : named_parameters()) p.set_requires_grad(v);
    }

    int64_t parameter_count() const {
        int64_t n = 0;
        for (auto& [name, p] : named_parameters()) n += p.numel();
        return n;
    }

    // Layers that host low-rank adapters, with their unrolled linear dims.
    // The output projection is excluded: its d_out is the pixel channel count,
    // too small for any useful rank.
    std::vector<AdapterHostInfo> adapter_hosts() const {
        std::vector<AdapterHostInfo> hosts;
        hosts.push_back({"in", (2 * cfg.channels + 1) * 9, cfg.width});
        for (int64_t b = 0; b < cfg.blocks; ++b)
            hosts.push_back({"block" + std::to_string(b), cfg.width * 9, cfg.width});
        hosts.push_back({"temporal", cfg.width * 3, cfg.width});
        return hosts;
    }

    int64_t temporal_after_block() const { return cfg.blocks / 2; }
};

template <typename T>
DenoiserNet<T> build_denoiser(const DenoiserConfig& cfg) {
    if (cfg.width < 1 || cfg.blocks < 1 || cfg.embed_dim < 2 || cfg.channels < 1 || cfg.groups < 1)
        throw ConfigError("denoiser config: extents must be >= 1 (embed >= 2)");
    if (cfg.width % cfg.groups != 0)
        throw ConfigError("denoiser config: width must be divisible by groups");
    DenoiserNet<T> net;
    net.cfg = cfg;

    auto uniform_init = [&](Tensor<T>& t, const std::string& name, int64_t fan_in) {
        RngStream rs(cfg.seed, "init/" + name);
        const T bound = T(1) / static_cast<T>(std::sqrt(static_cast<double>(fan_in)));
        for (int64_t i = 0; i < t.numel(); ++i)
            t.data()[i] = (static_cast<T>(rs.uniform(static_cast<uint64_t>(i))) * T(2) - T(1)) * bound;
    };

    const int64_t w = cfg.width, d = cfg.channels, e = cfg.embed_dim;
    net.in_kernel = Tensor<T>::zeros({w, 2 * d + 1, 1, 3, 3});
    net.in_bias = Tensor<T>::zeros({w});
    uniform_init(net.in_kernel, "in.kernel", (2 * d + 1) * 9);
    uniform_init(net.in_bias, "in.bias", (2 * d + 1) * 9);
    for (int64_t b = 0; b < cfg.blocks; ++b) {
        std::string p = "block" + std::to_string(b) + ".";
        net.block_kernels.push_back(Tensor<T>::zeros({w, w, 1, 3, 3}));
        net.block_biases.push_back(Tensor<T>::zeros({w}));
        uniform_init(net.block_kernels.back(), p + "kernel", w * 9);
        uniform_init(net.block_biases.back(), p + "bias", w * 9);
        net.gn_gains.push_back(Tensor<T>::filled({w}, T(1)));
        net.gn_shifts.push_back(Tensor<T>::zeros({w}));
        net.temb_weights.push_back(Tensor<T>::zeros({w, e}));
        net.temb_biases.push_back(Tensor<T>::zeros({w}));
        uniform_init(net.temb_weights.back(), p + "temb_weight", e);
        uniform_init(net.temb_biases.back(), p + "temb_bias", e);
    }
    net.t_kernel = Tensor<T>::zeros({w, w, 3});
    net.t_bias = Tensor<T>::zeros({w});
    uniform_init(net.t_kernel, "temporal.kernel", w * 3);
    uniform_init(net.t_bias, "temporal.bias", w * 3);
    net.out_kernel = Tensor<T>::zeros({d, w, 1, 3, 3});
    net.out_bias = Tensor<T>::zeros({d});
    uniform_init(net.out_kernel, "out.kernel", w * 9);
    uniform_init(net.out_bias, "out.bias", w * 9);
    return net;
}

// Masked-video conditioning: known pixels keep their [0,1] values, masked
// pixels carry the -1 sentinel, and the mask itself rides along as a channel.
template <typename T>
struct ConditionInput {
    Tensor<T> masked_video;  // [t, d, h, w]
    Tensor<T> mask_channel;  // [t, 1, h, w], 1 = known

    void validate() const {
        check_shape(masked_video.shape().size() == 4 && mask_channel.shape().size() == 4,
                    "condition: expects [t,d,h,w] inputs");
        const auto& vs = masked_video.shape();
        const auto& ms = mask_channel.shape();
        check_shape(ms[0] == vs[0] && ms[1] == 1 && ms[2] == vs[2] && ms[3] == vs[3],
                    "condition: mask channel dims mismatch");
        const int64_t t = vs[0], d = vs[1], hw = vs[2] * vs[3];
        for (int64_t f = 0; f < t; ++f)
            for (int64_t i = 0; i < hw; ++i) {
                float m = static_cast<float>(mask_channel.data()[f * hw + i]);
                if (m != 0.0f && m != 1.0f) throw InputError("condition: mask not binary");
                for (int64_t c = 0; c < d; ++c) {
                    T v = masked_video.data()[(f * d + c) * hw + i];
                    if (m == 0.0f && v != T(-1))
                        throw InputError("condition: masked pixel missing -1 sentinel");
                    if (m == 1.0f && (v < T(0) || v > T(1)))
                        throw InputError("condition: known pixel outside [0,1]");
                }
            }
    }
};

// Builds the conditioning pair from a video and an [h,w] known mask.
template <typename T>
ConditionInput<T> make_condition(const Tensor<T>& video, const Video& mask_hw) {
    const auto& vs = video.shape();
    check_shape(vs.size() == 4, "make_condition: video must be [t,d,h,w]");
    check_shape(mask_hw.shape() == Shape{vs[2], vs[3]}, "make_condition: mask must be [h,w]");
    const int64_t t = vs[0], d = vs[1], hw = vs[2] * vs[3];
    ConditionInput<T> cond;
    cond.masked_video = Tensor<T>::zeros(vs);
    cond.mask_channel = Tensor<T>::zeros({t, 1, vs[2], vs[3]});
    for (int64_t f = 0; f < t; ++f)
        for (int64_t i = 0; i < hw; ++i) {
            float m = mask_hw.data()[i];
            cond.mask_channel.data()[f * hw + i] = static_cast<T>(m);
            for (int64_t c = 0; c < d; ++c)
                cond.masked_video.data()[(f * d + c) * hw + i] =
                    m > 0.0f ? video.data()[(f * d + c) * hw + i] : T(-1);
        }
    return cond;
}

// fully-unknown condition (all -1, mask 0); the unconditional branch of CFG
template <typename T>
ConditionInput<T> null_condition(int64_t t, int64_t d, int64_t h, int64_t w) {
    ConditionInput<T> cond;
    cond.masked_video = Tensor<T>::filled({t, d, h, w}, T(-1));
    cond.mask_channel = Tensor<T>::zeros({t, 1, h, w});
    return cond;
}

enum class InsertionMode { full, spatial_aware };

namespace detail {

// adapter correction for a conv host: down-projection conv followed by a 1x1
// up-projection, scaled by alpha_lora/r and the per-position insertion weight
template <typename T>
Tensor<T> adapter_delta_p3d(const Tensor<T>& input, const LoraAdapter<T>& a, int64_t c_in) {
    auto down_kernel = reshape_copy(transpose2d(a.w_down), {a.rank, c_in, 1, 3, 3});
    auto mid = conv_p3d(input, down_kernel, Tensor<T>());
    return conv_1x1(mid, transpose2d(a.w_up));
}

template <typename T>
Tensor<T> adapter_delta_temporal(const Tensor<T>& input, const LoraAdapter<T>& a, int64_t c_in) {
    auto down_kernel = reshape_copy(transpose2d(a.w_down), {a.rank, c_in, 3});
    auto mid = temporal_conv(input, down_kernel, Tensor<T>());
    return conv_1x1(mid, transpose2d(a.w_up));
}

}  // namespace detail

// epsilon-prediction forward pass; adapters optional, inserted fully or with
// the spatial-aware weight map evaluated at each host's feature resolution
template <typename T>
Tensor<T> predict_noise(const DenoiserNet<T>& net, const AdapterSet<T>* adapters,
                        const Tensor<T>& v_noisy, const ConditionInput<T>& cond, int64_t t,
                        InsertionMode mode = InsertionMode::full, const SAConfig* sa_cfg = nullptr) {
    const auto& vs = v_noisy.shape();
    check_shape(vs.size() == 4 && vs[1] == net.cfg.channels,
                "predict_noise: noisy input must be [t," + std::to_string(net.cfg.channels) + ",h,w]");
    check_same_shape(v_noisy, cond.masked_video, "predict_noise");
    if (t < 1) throw InputError("predict_noise: t must be >= 1");
    if (mode == InsertionMode::spatial_aware && adapters && !sa_cfg)
        throw ConfigError("predict_noise: spatial-aware insertion needs an SAConfig");

    std::map<std::pair<int64_t, int64_t>, std::vector<T>> sa_maps;
    auto sa_map_for = [&](int64_t fh, int64_t fw) -> const std::vector<T>* {
        if (mode != InsertionMode::spatial_aware || !sa_cfg) return nullptr;
        auto key = std::make_pair(fh, fw);
        auto it = sa_maps.find(key);
        if (it == sa_maps.end()) it = sa_maps.emplace(key, sa_weight_map<T>(*sa_cfg, fh, fw)).first;
        return &it->second;
    };
    auto host = [&](const std::string& name) -> const LoraAdapter<T>* {
        if (!adapters) return nullptr;
        auto it = adapters->adapters.find(name);
        return it == adapters->adapters.end() ? nullptr : &it->second;
    };

    auto x = concat_channels<T>({v_noisy, cond.masked_video, cond.mask_channel});

    auto h = conv_p3d(x, net.in_kernel, net.in_bias);
    if (const auto* a = host("in"))
        h = scaled_residual(h, detail::adapter_delta_p3d(x, *a, 2 * net.cfg.channels + 1),
                            a->scale(), sa_map_for(vs[2], vs[3]));

    auto emb = sinusoidal_embedding<T>(t, net.cfg.embed_dim);
    for (int64_t b = 0; b < net.cfg.blocks; ++b) {
        auto c = conv_p3d(h, net.block_kernels[static_cast<size_t>(b)],
                          net.block_biases[static_cast<size_t>(b)]);
        if (const auto* a = host("block" + std::to_string(b)))
            c = scaled_residual(c, detail::adapter_delta_p3d(h, *a, net.cfg.width), a->scale(),
                                sa_map_for(vs[2], vs[3]));
        c = group_norm_3d(c, net.cfg.groups, net.gn_gains[static_cast<size_t>(b)],
                          net.gn_shifts[static_cast<size_t>(b)]);
        auto tb = linear_vec(net.temb_weights[static_cast<size_t>(b)],
                             net.temb_biases[static_cast<size_t>(b)], emb);
        c = add_channel_bias(c, tb);
        h = add(h, silu(c));
        if (b == net.temporal_after_block()) {
            auto tl = temporal_conv(h, net.t_kernel, net.t_bias);
            if (const auto* a = host("temporal"))
                tl = scaled_residual(tl, detail::adapter_delta_temporal(h, *a, net.cfg.width),
                                     a->scale(), sa_map_for(vs[2], vs[3]));
            h = add(h, tl);
        }
    }
    return conv_p3d(h, net.out_kernel, net.out_bias);
}

// adapter-free convenience overload
template <typename T>
Tensor<T> predict_noise(const DenoiserNet<T>& net, const Tensor<T>& v_noisy,
                        const ConditionInput<T>& cond, int64_t t) {
    return predict_noise(net, static_cast<const AdapterSet<T>*>(nullptr), v_noisy, cond, t);
}

// ---- base checkpoint (MBAS) ----

template <typename T>
void save_base_checkpoint(const DenoiserNet<T>& net, const std::string& path) {
    BinaryWriter w;
    w.magic("MBAS");
    w.u32(1);
    auto named = net.named_parameters();
    w.u32(static_cast<uint32_t>(named.size()) + 1);
    // architecture facts not recoverable from tensor shapes ride in the table
    w.str("arch.groups");
    w.u32(1);
    w.u64(1);
    w.f32(static_cast<float>(net.cfg.groups));
    for (auto& [name, p] : named) {
        w.str(name);
        w.u32(static_cast<uint32_t>(p.shape().size()));
        for (int64_t dim : p.shape()) w.u64(static_cast<uint64_t>(dim));
        w.f32_array_cast(p.data(), static_cast<size_t>(p.numel()));
    }
    w.finish(path);
}

template <typename T>
DenoiserNet<T> load_base_checkpoint(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic("MBAS", path);
    uint32_t version = r.u32();
    if (version != 1)
        throw IoError("unsupported base checkpoint version " + std::to_string(version) + ": " + path);
    uint32_t count = r.u32();
    std::map<std::string, Tensor<T>> table;
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        uint32_t nd = r.u32();
        if (nd > 8) throw IoError("corrupt file (bad tensor rank): " + path);
        Shape shape;
        for (uint32_t k = 0; k < nd; ++k) shape.push_back(static_cast<int64_t>(r.u64()));
        if (motia::numel(shape) < 1 || motia::numel(shape) > (1 << 28))
            throw IoError("corrupt file (bad tensor shape): " + path);
        Tensor<T> t = Tensor<T>::zeros(shape);
        r.f32_array_cast(t.data(), static_cast<size_t>(t.numel()));
        table.emplace(std::move(name), std::move(t));
    }
    auto fetch = [&](const std::string& name) -> Tensor<T> {
        auto it = table.find(name);
        if (it == table.end()) throw IoError("corrupt file (missing tensor " + name + "): " + path);
        return it->second;
    };

    DenoiserConfig cfg;
    auto ink = fetch("in.kernel");
    cfg.width = ink.shape()[0];
    cfg.channels = (ink.shape()[1] - 1) / 2;
    cfg.blocks = 0;
    while (table.count("block" + std::to_string(cfg.blocks) + ".kernel")) ++cfg.blocks;
    if (cfg.blocks == 0) throw IoError("corrupt file (no blocks): " + path);
    cfg.embed_dim = fetch("block0.temb_weight").shape()[1];
    cfg.groups = static_cast<int64_t>(fetch("arch.groups").data()[0]);

    DenoiserNet<T> net = build_denoiser<T>(cfg);
    for (auto& [name, p] : net.named_parameters()) {
        Tensor<T> stored = fetch(name);
        if (stored.shape() != p.shape())
            throw IoError("corrupt file (shape mismatch for " + name + "): " + path);
        std::copy(stored.data(), stored.data() + stored.numel(), p.data());
    }
    return net;
}

// ---- base pretraining on the synthetic family ----

struct PretrainConfig {
    ShapesSceneConfig scene;       // family template; per-step seeds derive from it
    MarginLimits limits;
    double cond_dropout = 0.1;
    double lr = 3e-4;
    double weight_decay = 1e-2;
    int64_t log_every = 100;
    bool verbose = false;
};

inline ShapesSceneConfig default_corpus_scene() {
    ShapesSceneConfig s;
    s.frames = 16;
    s.height = 32;
    s.width = 32;
    s.background = 0.1f;
    s.background_hi = 0.4f;
    s.num_shapes = 3;
    return s;
}

// One Eq.-5 objective step on a freshly drawn tensor; shared by pretraining
// (all parameters trainable) and adaptation (adapter parameters only).
template <typename T>
T denoise_objective_step(const DenoiserNet<T>& net, const AdapterSet<T>* adapters,
                         const Tensor<T>& clip, const BoundaryMask& bmask, int64_t t,
                         const Tensor<T>& eps, const NoiseSchedule& sched,
                         std::vector<Tensor<T>>& params, AdamState<T>& opt, bool drop_condition) {
    for (auto& p : params) p.zero_grad();
    GradTape<T> tape;
    T loss_val;
    {
        TapeScope<T> scope(tape);
        auto v_noisy = forward_noise(clip, t, eps, sched);
        auto d = video_dims_of(clip);
        ConditionInput<T> cond = drop_condition ? null_condition<T>(d[0], d[1], d[2], d[3])
                                                : make_condition(clip, bmask.mask);
        auto eps_hat = predict_noise(net, adapters, v_noisy, cond, t, InsertionMode::full);
        auto loss = mse_loss(eps_hat, eps);
        loss_val = loss.item();
        if (!std::isfinite(static_cast<double>(loss_val)))
            throw NumericError("training diverged: non-finite loss");
        tape.backward(loss);
    }
    adam_step(opt, params);
    return loss_val;
}

template <typename T>
std::array<int64_t, 4> video_dims_of(const Tensor<T>& v) {
    check_shape(v.shape().size() == 4, "expected [t,d,h,w]");
    return {v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3]};
}

// Trains every parameter of the net on freshly sampled synthetic clips with
// random boundary masks; returns the per-step loss trace.
template <typename T>
std::vector<T> pretrain_base(DenoiserNet<T>& net, const PretrainConfig& cfg,
                             const NoiseSchedule& sched, int64_t steps, uint64_t seed) {
    net.set_requires_grad(true);
    auto params = net.parameters();
    AdamState<T> opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;
    opt.init(params);

    RngStream t_stream(seed, "pretrain/t");
    RngStream mask_stream(seed, "pretrain/mask");
    RngStream drop_stream(seed, "pretrain/drop");
    std::vector<T> trace;
    trace.reserve(static_cast<size_t>(steps));
    for (int64_t s = 0; s < steps; ++s) {
        ShapesSceneConfig scene = cfg.scene;
        scene.seed = rng::mix64(seed ^ 0x9e3779b97f4a7c15ULL) + static_cast<uint64_t>(s);
        auto [clip, meta] = gen_moving_shapes(scene);
        Tensor<T> clip_t;
        if constexpr (std::is_same_v<T, float>) {
            clip_t = clip;
        } else {
            clip_t = Tensor<T>::zeros(clip.shape());
            for (int64_t i = 0; i < clip.numel(); ++i)
                clip_t.data()[i] = static_cast<T>(clip.data()[i]);
        }
        int64_t t = t_stream.uniform_int(static_cast<uint64_t>(s), 1, sched.steps);
        auto eps = randn_stream<T>(clip.shape(), RngStream(seed, "pretrain/eps", static_cast<uint64_t>(s)));
        auto bmask = random_boundary_mask(scene.height, scene.width, cfg.limits, mask_stream,
                                          4 * static_cast<uint64_t>(s));
        bool drop = drop_stream.uniform(static_cast<uint64_t>(s)) < cfg.cond_dropout;
        T loss = denoise_objective_step(net, static_cast<const AdapterSet<T>*>(nullptr), clip_t,
                                        bmask, t, eps, sched, params, opt, drop);
        trace.push_back(loss);
        if (cfg.verbose && cfg.log_every > 0 && (s + 1) % cfg.log_every == 0) {
            double avg = 0;
            int64_t lo = std::max<int64_t>(0, s + 1 - cfg.log_every);
            for (int64_t i = lo; i <= s; ++i) avg += static_cast<double>(trace[static_cast<size_t>(i)]);
            avg /= static_cast<double>(s + 1 - lo);
            std::fprintf(stderr, "pretrain step %lld: mean loss %.5f\n",
                         static_cast<long long>(s + 1), avg);
        }
    }
    net.set_requires_grad(false);
    return trace;
}

}  // namespace motia
