#pragma once

#include <cstdio>
#include <map>

#include "io.hpp"
#include "ops.hpp"

namespace motia {

// Low-rank pair acting as an additive correction to one host transform.
// At initialization w_up is zero, so the adapted transform equals the base.
template <typename T>
struct LoraAdapter {
    Tensor<T> w_down;  // [d_in, r]
    Tensor<T> w_up;    // [r, d_out]
    int64_t d_in = 0, d_out = 0, rank = 0;
    T alpha = T(8);    // alpha_lora

    T scale() const { return alpha / static_cast<T>(rank); }
};

template <typename T>
struct AdapterSet {
    std::map<std::string, LoraAdapter<T>> adapters;  // keyed by host layer name

    std::vector<Tensor<T>> parameters() const {
        std::vector<Tensor<T>> out;
        for (const auto& [name, a] : adapters) {
            out.push_back(a.w_down);
            out.push_back(a.w_up);
        }
        return out;
    }
};

struct AdapterHostInfo {
    std::string name;
    int64_t d_in = 0;
    int64_t d_out = 0;
};

// Spatial-aware insertion configuration (decay constant and the known
// rectangle in full-resolution pixel coordinates, half-open bounds).
struct SAConfig {
    double decay = 3.0;  // K
    int64_t top = 0, bottom = 0, left = 0, right = 0;
    int64_t full_h = 0, full_w = 0;

    void validate() const {
        if (decay < 0.0) throw ConfigError("sa: K must be >= 0");
        if (!(top < bottom && left < right) || top < 0 || left < 0 || bottom > full_h ||
            right > full_w)
            throw ConfigError("sa: known rectangle empty or out of frame bounds");
    }
};

namespace detail {

struct RectF {
    int64_t top, bottom, left, right;
};

// proportional floor/ceil rescale; never collapses to an empty rectangle
inline RectF rescale_rect(const SAConfig& cfg, int64_t feat_h, int64_t feat_w) {
    auto lo = [](int64_t v, int64_t feat, int64_t full) {
        return static_cast<int64_t>(std::floor(static_cast<double>(v) * feat / full));
    };
    auto hi = [](int64_t v, int64_t feat, int64_t full) {
        return static_cast<int64_t>(std::ceil(static_cast<double>(v) * feat / full));
    };
    RectF r{lo(cfg.top, feat_h, cfg.full_h), hi(cfg.bottom, feat_h, cfg.full_h),
            lo(cfg.left, feat_w, cfg.full_w), hi(cfg.right, feat_w, cfg.full_w)};
    r.bottom = std::min(r.bottom, feat_h);
    r.right = std::min(r.right, feat_w);
    return r;
}

inline double rect_distance(int64_t y, int64_t x, const RectF& r) {
    double dy = std::max<int64_t>({r.top - y, y - (r.bottom - 1), 0});
    double dx = std::max<int64_t>({r.left - x, x - (r.right - 1), 0});
    return std::sqrt(dy * dy + dx * dx);
}

}  // namespace detail

// Insertion weight alpha(p) = exp(-K * d(p) / max_p d(p)); 1 on and inside
// the known rectangle, exp(-K) at the farthest position, identically 1 when
// the rectangle covers the whole map.
inline double sa_weight(int64_t row, int64_t col, const SAConfig& cfg, int64_t feat_h,
                        int64_t feat_w) {
    cfg.validate();
    if (row < 0 || row >= feat_h || col < 0 || col >= feat_w)
        throw InputError("sa_weight: position out of feature bounds");
    auto rect = detail::rescale_rect(cfg, feat_h, feat_w);
    double maxd = 0.0;
    for (int64_t y : {int64_t(0), feat_h - 1})
        for (int64_t x : {int64_t(0), feat_w - 1})
            maxd = std::max(maxd, detail::rect_distance(y, x, rect));
    if (maxd == 0.0) return 1.0;
    return std::exp(-cfg.decay * detail::rect_distance(row, col, rect) / maxd);
}

// Full [h,w] map of sa_weight values for one feature resolution.
template <typename T>
std::vector<T> sa_weight_map(const SAConfig& cfg, int64_t feat_h, int64_t feat_w) {
    cfg.validate();
    auto rect = detail::rescale_rect(cfg, feat_h, feat_w);
    double maxd = 0.0;
    for (int64_t y : {int64_t(0), feat_h - 1})
        for (int64_t x : {int64_t(0), feat_w - 1})
            maxd = std::max(maxd, detail::rect_distance(y, x, rect));
    std::vector<T> map(static_cast<size_t>(feat_h * feat_w));
    for (int64_t y = 0; y < feat_h; ++y)
        for (int64_t x = 0; x < feat_w; ++x)
            map[static_cast<size_t>(y * feat_w + x)] =
                maxd == 0.0 ? T(1)
                            : static_cast<T>(std::exp(-cfg.decay *
                                                      detail::rect_distance(y, x, rect) / maxd));
    return map;
}

// Reference form of the adapted transform on a single feature vector:
// W^T x + alpha_p * (alpha_lora / r) * W_up^T (W_down^T x).
template <typename T>
std::vector<T> adapted_transform(const std::vector<T>& x, const Tensor<T>& w_base,
                                 const LoraAdapter<T>& adapter, T alpha_p) {
    check_shape(w_base.shape().size() == 2, "adapted_transform: base must be [d_in,d_out]");
    int64_t d_in = w_base.shape()[0], d_out = w_base.shape()[1];
    check_shape(static_cast<int64_t>(x.size()) == d_in, "adapted_transform: input length mismatch");
    check_shape(adapter.d_in == d_in && adapter.d_out == d_out,
                "adapted_transform: adapter dims mismatch");
    std::vector<T> out(static_cast<size_t>(d_out), T(0));
    for (int64_t i = 0; i < d_in; ++i)
        for (int64_t o = 0; o < d_out; ++o)
            out[static_cast<size_t>(o)] += w_base.data()[i * d_out + o] * x[static_cast<size_t>(i)];
    std::vector<T> mid(static_cast<size_t>(adapter.rank), T(0));
    for (int64_t i = 0; i < d_in; ++i)
        for (int64_t r = 0; r < adapter.rank; ++r)
            mid[static_cast<size_t>(r)] +=
                adapter.w_down.data()[i * adapter.rank + r] * x[static_cast<size_t>(i)];
    const T s = alpha_p * adapter.scale();
    for (int64_t r = 0; r < adapter.rank; ++r)
        for (int64_t o = 0; o < d_out; ++o)
            out[static_cast<size_t>(o)] += s * adapter.w_up.data()[r * d_out + o] * mid[static_cast<size_t>(r)];
    return out;
}

// One adapter per host layer; w_up zero so insertion starts as the identity.
template <typename T>
AdapterSet<T> init_adapters(const std::vector<AdapterHostInfo>& hosts, int64_t rank, T alpha,
                            uint64_t seed) {
    if (rank < 1) throw ConfigError("init_adapters: rank must be >= 1");
    AdapterSet<T> set;
    for (const auto& h : hosts) {
        int64_t mind = std::min(h.d_in, h.d_out);
        if (rank > mind)
            throw ConfigError("init_adapters: rank " + std::to_string(rank) + " exceeds min dim " +
                              std::to_string(mind) + " of host " + h.name);
        if (rank > mind / 4)
            std::fprintf(stderr, "warning: adapter rank %lld not small against host %s (min dim %lld)\n",
                         static_cast<long long>(rank), h.name.c_str(), static_cast<long long>(mind));
        LoraAdapter<T> a;
        a.d_in = h.d_in;
        a.d_out = h.d_out;
        a.rank = rank;
        a.alpha = alpha;
        RngStream rs(seed, "lora_down/" + h.name);
        a.w_down = Tensor<T>::zeros({h.d_in, rank});
        const T std_dev = T(1) / static_cast<T>(std::sqrt(static_cast<double>(h.d_in)));
        for (int64_t i = 0; i < a.w_down.numel(); ++i)
            a.w_down.data()[i] = static_cast<T>(rs.normal(static_cast<uint64_t>(i))) * std_dev;
        a.w_up = Tensor<T>::zeros({rank, h.d_out});
        set.adapters.emplace(h.name, std::move(a));
    }
    return set;
}

template <typename T>
void save_adapters(const AdapterSet<T>& set, const std::string& path) {
    BinaryWriter w;
    w.magic("MLRA");
    w.u32(1);
    w.u32(static_cast<uint32_t>(set.adapters.size()));
    for (const auto& [name, a] : set.adapters) {
        w.str(name);
        w.u32(static_cast<uint32_t>(a.d_in));
        w.u32(static_cast<uint32_t>(a.d_out));
        w.u32(static_cast<uint32_t>(a.rank));
        w.f32(static_cast<float>(a.alpha));
        w.f32_array_cast(a.w_down.data(), static_cast<size_t>(a.w_down.numel()));
        w.f32_array_cast(a.w_up.data(), static_cast<size_t>(a.w_up.numel()));
    }
    w.finish(path);
}

template <typename T>
AdapterSet<T> load_adapters(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic("MLRA", path);
    uint32_t version = r.u32();
    if (version != 1)
        throw IoError("unsupported adapter checkpoint version " + std::to_string(version) + ": " + path);
    uint32_t count = r.u32();
    AdapterSet<T> set;
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        LoraAdapter<T> a;
        a.d_in = r.u32();
        a.d_out = r.u32();
        a.rank = r.u32();
        if (a.d_in < 1 || a.d_out < 1 || a.rank < 1 || a.rank > std::min(a.d_in, a.d_out))
            throw IoError("corrupt file (bad adapter dims): " + path);
        a.alpha = static_cast<T>(r.f32());
        a.w_down = Tensor<T>::zeros({a.d_in, a.rank});
        r.f32_array_cast(a.w_down.data(), static_cast<size_t>(a.w_down.numel()));
        a.w_up = Tensor<T>::zeros({a.rank, a.d_out});
        r.f32_array_cast(a.w_up.data(), static_cast<size_t>(a.w_up.numel()));
        set.adapters.emplace(std::move(name), std::move(a));
    }
    return set;
}

}  // namespace motia
