#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>

#include "tensor.hpp"

namespace motia {
namespace detail {

// C[M x N] += A[M x K] * B[K x N], all row-major contiguous. Four output rows
// share each streamed B row, which keeps the inner loop FMA-bound.
template <typename T>
void gemm_acc(const T* __restrict a, const T* __restrict b, T* __restrict c,
              int64_t m_dim, int64_t k_dim, int64_t n_dim) {
    int64_t m0 = 0;
    for (; m0 + 4 <= m_dim; m0 += 4) {
        T* __restrict c0 = c + (m0 + 0) * n_dim;
        T* __restrict c1 = c + (m0 + 1) * n_dim;
        T* __restrict c2 = c + (m0 + 2) * n_dim;
        T* __restrict c3 = c + (m0 + 3) * n_dim;
        for (int64_t k = 0; k < k_dim; ++k) {
            const T a0 = a[(m0 + 0) * k_dim + k];
            const T a1 = a[(m0 + 1) * k_dim + k];
            const T a2 = a[(m0 + 2) * k_dim + k];
            const T a3 = a[(m0 + 3) * k_dim + k];
            const T* __restrict br = b + k * n_dim;
            for (int64_t n = 0; n < n_dim; ++n) {
                c0[n] += a0 * br[n];
                c1[n] += a1 * br[n];
                c2[n] += a2 * br[n];
                c3[n] += a3 * br[n];
            }
        }
    }
    for (; m0 < m_dim; ++m0) {
        T* __restrict cr = c + m0 * n_dim;
        for (int64_t k = 0; k < k_dim; ++k) {
            const T av = a[m0 * k_dim + k];
            const T* __restrict br = b + k * n_dim;
            for (int64_t n = 0; n < n_dim; ++n) cr[n] += av * br[n];
        }
    }
}

template <typename T>
void transpose(const T* src, T* dst, int64_t rows, int64_t cols) {
    constexpr int64_t B = 32;
    for (int64_t r0 = 0; r0 < rows; r0 += B)
        for (int64_t c0 = 0; c0 < cols; c0 += B) {
            int64_t r1 = std::min(r0 + B, rows), c1 = std::min(c0 + B, cols);
            for (int64_t r = r0; r < r1; ++r)
                for (int64_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
        }
}

// One frame of [c,h,w] into columns [c*9, h*w] for a 3x3 kernel, zero pad 1.
template <typename T>
void im2col3x3(const T* frame, T* cols, int64_t c_in, int64_t h, int64_t w) {
    const int64_t hw = h * w;
    for (int64_t c = 0; c < c_in; ++c) {
        const T* src = frame + c * hw;
        for (int64_t ky = 0; ky < 3; ++ky) {
            for (int64_t kx = 0; kx < 3; ++kx) {
                T* row = cols + ((c * 3 + ky) * 3 + kx) * hw;
                int64_t dy = ky - 1, dx = kx - 1;
                for (int64_t y = 0; y < h; ++y) {
                    int64_t sy = y + dy;
                    T* dst = row + y * w;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst, dst + w, T(0));
                        continue;
                    }
                    const T* s = src + sy * w;
                    if (dx == 0) {
                        std::copy(s, s + w, dst);
                    } else if (dx == 1) {
                        std::copy(s + 1, s + w, dst);
                        dst[w - 1] = T(0);
                    } else {
                        dst[0] = T(0);
                        std::copy(s, s + w - 1, dst + 1);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col3x3: scatter-add columns back onto the input frame.
template <typename T>
void col2im3x3_acc(const T* cols, T* frame, int64_t c_in, int64_t h, int64_t w) {
    const int64_t hw = h * w;
    for (int64_t c = 0; c < c_in; ++c) {
        T* dst_c = frame + c * hw;
        for (int64_t ky = 0; ky < 3; ++ky) {
            for (int64_t kx = 0; kx < 3; ++kx) {
                const T* row = cols + ((c * 3 + ky) * 3 + kx) * hw;
                int64_t dy = ky - 1, dx = kx - 1;
                for (int64_t y = 0; y < h; ++y) {
                    int64_t sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    const T* s = row + y * w;
                    T* d = dst_c + sy * w;
                    if (dx == 0)
                        for (int64_t x = 0; x < w; ++x) d[x] += s[x];
                    else if (dx == 1)
                        for (int64_t x = 0; x < w - 1; ++x) d[x + 1] += s[x];
                    else
                        for (int64_t x = 1; x < w; ++x) d[x - 1] += s[x];
                }
            }
        }
    }
}

template <typename T>
std::vector<T>& scratch(size_t which, size_t n) {
    static thread_local std::vector<T> bufs[4];
    auto& b = bufs[which];
    if (b.size() < n) b.resize(n);
    return b;
}

}  // namespace detail

// ---- elementwise ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "add");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
    if (auto* tape = GradTape<T>::active(); tape && (a.needs_grad() || b.needs_grad())) {
        out.mark_needs_grad();
        tape->record([a, b, out]() mutable {
            const T* g = out.grad();
            int64_t n = out.numel();
            if (a.needs_grad()) {
                T* ga = a.grad();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (b.needs_grad()) {
                T* gb = b.grad();
                for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "sub");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] - pb[i];
    if (auto* tape = GradTape<T>::active(); tape && (a.needs_grad() || b.needs_grad())) {
        out.mark_needs_grad();
        tape->record([a, b, out]() mutable {
            const T* g = out.grad();
            int64_t n = out.numel();
            if (a.needs_grad()) {
                T* ga = a.grad();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (b.needs_grad()) {
                T* gb = b.grad();
                for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "mul");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
    if (auto* tape = GradTape<T>::active(); tape && (a.needs_grad() || b.needs_grad())) {
        out.mark_needs_grad();
        tape->record([a, b, out]() mutable {
            const T* g = out.grad();
            int64_t n = out.numel();
            if (a.needs_grad()) {
                T* ga = a.grad();
                const T* pb2 = b.data();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb2[i];
            }
            if (b.needs_grad()) {
                T* gb = b.grad();
                const T* pa2 = a.data();
                for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa2[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) {
        T s = T(1) / (T(1) + std::exp(-px[i]));
        po[i] = px[i] * s;
    }
    if (auto* tape = GradTape<T>::active(); tape && x.needs_grad()) {
        out.mark_needs_grad();
        tape->record([x, out]() mutable {
            const T* g = out.grad();
            const T* px2 = x.data();
            T* gx = x.grad();
            for (int64_t i = 0; i < out.numel(); ++i) {
                T s = T(1) / (T(1) + std::exp(-px2[i]));
                gx[i] += g[i] * s * (T(1) + px2[i] * (T(1) - s));
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    double acc = 0;
    const T* px = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(px[i]);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
    if (auto* tape = GradTape<T>::active(); tape && x.needs_grad()) {
        out.mark_needs_grad();
        tape->record([x, out]() mutable {
            T g = out.grad()[0];
            T* gx = x.grad();
            for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g;
        });
    }
    return out;
}

// mean squared error; gradient flows to pred only (target is the drawn noise)
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    check_same_shape(pred, target, "mse_loss");
    const T* pp = pred.data();
    const T* pt = target.data();
    int64_t n = pred.numel();
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(pp[i]) - static_cast<double>(pt[i]);
        acc += d * d;
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
    if (auto* tape = GradTape<T>::active(); tape && pred.needs_grad()) {
        out.mark_needs_grad();
        tape->record([pred, target, out]() mutable {
            T g = out.grad()[0] * T(2) / static_cast<T>(pred.numel());
            T* gp = pred.grad();
            const T* pp2 = pred.data();
            const T* pt2 = target.data();
            for (int64_t i = 0; i < pred.numel(); ++i) gp[i] += g * (pp2[i] - pt2[i]);
        });
    }
    return out;
}

// MSE restricted by an [h,w] weight plane broadcast over frames and channels;
// returns sum(w*(p-t)^2)/sum(w). Gradient flows to pred only.
template <typename T>
Tensor<T> weighted_mse_loss(const Tensor<T>& pred, const Tensor<T>& target,
                            const std::vector<T>& weight_hw) {
    check_same_shape(pred, target, "weighted_mse_loss");
    const auto& s = pred.shape();
    check_shape(s.size() == 4, "weighted_mse_loss: expects [t,c,h,w]");
    const int64_t t = s[0], c = s[1], hw = s[2] * s[3];
    check_shape(static_cast<int64_t>(weight_hw.size()) == hw, "weighted_mse_loss: weight size");
    double wsum = 0;
    for (T wv : weight_hw) wsum += static_cast<double>(wv);
    if (wsum <= 0.0) throw InputError("weighted_mse_loss: empty region");
    const double denom = wsum * static_cast<double>(t * c);
    double acc = 0;
    for (int64_t f = 0; f < t; ++f)
        for (int64_t ch = 0; ch < c; ++ch) {
            const T* p = pred.data() + (f * c + ch) * hw;
            const T* r = target.data() + (f * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) {
                double d = static_cast<double>(p[i]) - static_cast<double>(r[i]);
                acc += static_cast<double>(weight_hw[static_cast<size_t>(i)]) * d * d;
            }
        }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / denom));
    if (auto* tape = GradTape<T>::active(); tape && pred.needs_grad()) {
        out.mark_needs_grad();
        tape->record([pred, target, weight_hw, out, t, c, hw, denom]() mutable {
            T g = out.grad()[0] * static_cast<T>(2.0 / denom);
            T* gp = pred.grad();
            for (int64_t f = 0; f < t; ++f)
                for (int64_t ch = 0; ch < c; ++ch) {
                    const T* p = pred.data() + (f * c + ch) * hw;
                    const T* r = target.data() + (f * c + ch) * hw;
                    T* gr = gp + (f * c + ch) * hw;
                    for (int64_t i = 0; i < hw; ++i)
                        gr[i] += g * weight_hw[static_cast<size_t>(i)] * (p[i] - r[i]);
                }
        });
    }
    return out;
}

// ---- matmul ----

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    check_shape(a.shape().size() == 2 && b.shape().size() == 2, "matmul: expects 2-D operands");
    int64_t m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
    check_shape(k == k2, "matmul: inner extents disagree " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    Tensor<T> out = Tensor<T>::zeros({m, n});
    detail::gemm_acc(a.data(), b.data(), out.data(), m, k, n);
    if (auto* tape = GradTape<T>::active(); tape && (a.needs_grad() || b.needs_grad())) {
        out.mark_needs_grad();
        tape->record([a, b, out, m, k, n]() mutable {
            const T* g = out.grad();
            if (a.needs_grad()) {
                auto& bt = detail::scratch<T>(0, static_cast<size_t>(k * n));
                detail::transpose(b.data(), bt.data(), k, n);
                detail::gemm_acc(g, bt.data(), a.grad(), m, n, k);
            }
            if (b.needs_grad()) {
                auto& at = detail::scratch<T>(1, static_cast<size_t>(m * k));
                detail::transpose(a.data(), at.data(), m, k);
                detail::gemm_acc(at.data(), g, b.grad(), k, m, n);
            }
        });
    }
    return out;
}

// ---- video ops: [t, c, h, w] activations ----

// Pseudo-3D convolution: a 1x3x3 kernel applied frame-wise, stride 1, zero
// pad 1, so the temporal extent passes through untouched.
template <typename T>
Tensor<T> conv_p3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias) {
    check_shape(input.shape().size() == 4, "conv_p3d: input must be [t,c,h,w]");
    check_shape(kernel.shape().size() == 5, "conv_p3d: kernel must be [c_out,c_in,1,3,3]");
    const auto& is = input.shape();
    const auto& ks = kernel.shape();
    int64_t t = is[0], c_in = is[1], h = is[2], w = is[3];
    int64_t c_out = ks[0];
    check_shape(ks[2] == 1, "conv_p3d: temporal kernel extent must be 1");
    check_shape(ks[3] == 3 && ks[4] == 3, "conv_p3d: spatial kernel must be 3x3");
    check_shape(ks[1] == c_in, "conv_p3d: channel mismatch, kernel expects " +
                                   std::to_string(ks[1]) + " got " + std::to_string(c_in));
    check_shape(!bias.defined() || bias.numel() == c_out, "conv_p3d: bias length != c_out");

    const int64_t hw = h * w, k9 = c_in * 9;
    Tensor<T> out = Tensor<T>::zeros({t, c_out, h, w});
    {
        auto& cols = detail::scratch<T>(0, static_cast<size_t>(k9 * hw));
        for (int64_t f = 0; f < t; ++f) {
            detail::im2col3x3(input.data() + f * c_in * hw, cols.data(), c_in, h, w);
            T* of = out.data() + f * c_out * hw;
            if (bias.defined())
                for (int64_t c = 0; c < c_out; ++c)
                    std::fill(of + c * hw, of + (c + 1) * hw, bias.data()[c]);
            detail::gemm_acc(kernel.data(), cols.data(), of, c_out, k9, hw);
        }
    }

    auto* tape = GradTape<T>::active();
    bool need = input.needs_grad() || kernel.needs_grad() || (bias.defined() && bias.needs_grad());
    if (tape && need) {
        out.mark_needs_grad();
        tape->record([input, kernel, bias, out, t, c_in, c_out, h, w]() mutable {
            const int64_t hw = h * w, k9 = c_in * 9;
            const T* g = out.grad();
            auto& cols = detail::scratch<T>(0, static_cast<size_t>(k9 * hw));
            auto& colsT = detail::scratch<T>(1, static_cast<size_t>(k9 * hw));
            if (bias.defined() && bias.needs_grad()) {
                T* gb = bias.grad();
                for (int64_t f = 0; f < t; ++f)
                    for (int64_t c = 0; c < c_out; ++c) {
                        const T* gr = g + (f * c_out + c) * hw;
                        double acc = 0;
                        for (int64_t i = 0; i < hw; ++i) acc += static_cast<double>(gr[i]);
                        gb[c] += static_cast<T>(acc);
                    }
            }
            std::vector<T> kT;
            if (input.needs_grad()) {
                kT.resize(static_cast<size_t>(k9 * c_out));
                detail::transpose(kernel.data(), kT.data(), c_out, k9);
            }
            auto& dcols = detail::scratch<T>(2, static_cast<size_t>(k9 * hw));
            for (int64_t f = 0; f < t; ++f) {
                const T* gf = g + f * c_out * hw;
                if (kernel.needs_grad()) {
                    detail::im2col3x3(input.data() + f * c_in * hw, cols.data(), c_in, h, w);
                    detail::transpose(cols.data(), colsT.data(), k9, hw);
                    detail::gemm_acc(gf, colsT.data(), kernel.grad(), c_out, hw, k9);
                }
                if (input.needs_grad()) {
                    std::fill(dcols.begin(), dcols.begin() + k9 * hw, T(0));
                    detail::gemm_acc(kT.data(), gf, dcols.data(), k9, c_out, hw);
                    detail::col2im3x3_acc(dcols.data(), input.grad() + f * c_in * hw, c_in, h, w);
                }
            }
        });
    }
    return out;
}

// Pointwise (1x1x1) convolution; the adapter up-projection path.
template <typename T>
Tensor<T> conv_1x1(const Tensor<T>& input, const Tensor<T>& kernel) {
    check_shape(input.shape().size() == 4, "conv_1x1: input must be [t,c,h,w]");
    check_shape(kernel.shape().size() == 2, "conv_1x1: kernel must be [c_out,c_in]");
    const auto& is = input.shape();
    int64_t t = is[0], c_in = is[1], h = is[2], w = is[3];
    int64_t c_out = kernel.shape()[0];
    check_shape(kernel.shape()[1] == c_in, "conv_1x1: channel mismatch");
    const int64_t hw = h * w;
    Tensor<T> out = Tensor<T>::zeros({t, c_out, h, w});
    for (int64_t f = 0; f < t; ++f)
        detail::gemm_acc(kernel.data(), input.data() + f * c_in * hw,
                         out.data() + f * c_out * hw, c_out, c_in, hw);
    if (auto* tape = GradTape<T>::active(); tape && (input.needs_grad() || kernel.needs_grad())) {
        out.mark_needs_grad();
        tape->record([input, kernel, out, t, c_in, c_out, h, w]() mutable {
            const int64_t hw = h * w;
            const T* g = out.grad();
            std::vector<T> kT;
            if (input.needs_grad()) {
                kT.resize(static_cast<size_t>(c_in * c_out));
                detail::transpose(kernel.data(), kT.data(), c_out, c_in);
            }
            auto& xT = detail::scratch<T>(0, static_cast<size_t>(c_in * hw));
            for (int64_t f = 0; f < t; ++f) {
                const T* gf = g + f * c_out * hw;
                if (kernel.needs_grad()) {
                    detail::transpose(input.data() + f * c_in * hw, xT.data(), c_in, hw);
                    detail::gemm_acc(gf, xT.data(), kernel.grad(), c_out, hw, c_in);
                }
                if (input.needs_grad())
                    detail::gemm_acc(kT.data(), gf, input.grad() + f * c_in * hw, c_in, c_out, hw);
            }
        });
    }
    return out;
}

// Width-3 mixing convolution across the frame axis, per pixel, zero padded in
// time. Kernel layout [c_out, c_in, 3]: tap 0 reads frame f-1, tap 2 frame f+1.
template <typename T>
Tensor<T> temporal_conv(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias) {
    check_shape(input.shape().size() == 4, "temporal_conv: input must be [t,c,h,w]");
    check_shape(kernel.shape().size() == 3 && kernel.shape()[2] == 3,
                "temporal_conv: kernel must be [c_out,c_in,3]");
    const auto& is = input.shape();
    int64_t t = is[0], c_in = is[1], h = is[2], w = is[3];
    int64_t c_out = kernel.shape()[0];
    check_shape(kernel.shape()[1] == c_in, "temporal_conv: channel mismatch");
    check_shape(!bias.defined() || bias.numel() == c_out, "temporal_conv: bias length != c_out");
    const int64_t hw = h * w;

    // three dense tap matrices [c_out x c_in]
    auto tap = [&](const T* kdata, int64_t dt, T* dst) {
        for (int64_t o = 0; o < c_out; ++o)
            for (int64_t i = 0; i < c_in; ++i) dst[o * c_in + i] = kdata[(o * c_in + i) * 3 + dt];
    };
    std::vector<T> taps(static_cast<size_t>(3 * c_out * c_in));
    for (int64_t d = 0; d < 3; ++d) tap(kernel.data(), d, taps.data() + d * c_out * c_in);

    Tensor<T> out = Tensor<T>::zeros({t, c_out, h, w});
    for (int64_t f = 0; f < t; ++f) {
        T* of = out.data() + f * c_out * hw;
        if (bias.defined())
            for (int64_t c = 0; c < c_out; ++c)
                std::fill(of + c * hw, of + (c + 1) * hw, bias.data()[c]);
        for (int64_t d = 0; d < 3; ++d) {
            int64_t src = f + d - 1;
            if (src < 0 || src >= t) continue;
            detail::gemm_acc(taps.data() + d * c_out * c_in, input.data() + src * c_in * hw, of,
                             c_out, c_in, hw);
        }
    }

    auto* tape = GradTape<T>::active();
    bool need = input.needs_grad() || kernel.needs_grad() || (bias.defined() && bias.needs_grad());
    if (tape && need) {
        out.mark_needs_grad();
        tape->record([input, kernel, bias, out, taps, t, c_in, c_out, h, w]() mutable {
            const int64_t hw = h * w;
            const T* g = out.grad();
            if (bias.defined() && bias.needs_grad()) {
                T* gb = bias.grad();
                for (int64_t f = 0; f < t; ++f)
                    for (int64_t c = 0; c < c_out; ++c) {
                        const T* gr = g + (f * c_out + c) * hw;
                        double acc = 0;
                        for (int64_t i = 0; i < hw; ++i) acc += static_cast<double>(gr[i]);
                        gb[c] += static_cast<T>(acc);
                    }
            }
            std::vector<T> tapT;
            if (input.needs_grad()) {
                tapT.resize(static_cast<size_t>(3 * c_in * c_out));
                for (int64_t d = 0; d < 3; ++d)
                    detail::transpose(taps.data() + d * c_out * c_in, tapT.data() + d * c_in * c_out,
                                      c_out, c_in);
            }
            std::vector<T> dtaps;
            auto& xT = detail::scratch<T>(0, static_cast<size_t>(c_in * hw));
            if (kernel.needs_grad()) dtaps.assign(static_cast<size_t>(3 * c_out * c_in), T(0));
            for (int64_t f = 0; f < t; ++f) {
                const T* gf = g + f * c_out * hw;
                for (int64_t d = 0; d < 3; ++d) {
                    int64_t src = f + d - 1;
                    if (src < 0 || src >= t) continue;
                    if (kernel.needs_grad()) {
                        detail::transpose(input.data() + src * c_in * hw, xT.data(), c_in, hw);
                        detail::gemm_acc(gf, xT.data(), dtaps.data() + d * c_out * c_in, c_out, hw,
                                         c_in);
                    }
                    if (input.needs_grad())
                        detail::gemm_acc(tapT.data() + d * c_in * c_out, gf,
                                         input.grad() + src * c_in * hw, c_in, c_out, hw);
                }
            }
            if (kernel.needs_grad()) {
                T* gk = kernel.grad();
                for (int64_t d = 0; d < 3; ++d)
                    for (int64_t o = 0; o < c_out; ++o)
                        for (int64_t i = 0; i < c_in; ++i)
                            gk[(o * c_in + i) * 3 + d] += dtaps[d * c_out * c_in + o * c_in + i];
            }
        });
    }
    return out;
}

// 3D group normalization: statistics pooled over t, h, w and the channels of
// each group, then per-channel affine.
template <typename T>
Tensor<T> group_norm_3d(const Tensor<T>& input, int64_t groups, const Tensor<T>& gain,
                        const Tensor<T>& shift, T eps = T(1e-5)) {
    check_shape(input.shape().size() == 4, "group_norm_3d: input must be [t,c,h,w]");
    const auto& is = input.shape();
    int64_t t = is[0], c = is[1], h = is[2], w = is[3];
    if (groups < 1 || c % groups != 0)
        throw ConfigError("group_norm_3d: channels " + std::to_string(c) +
                          " not divisible by groups " + std::to_string(groups));
    check_shape(gain.numel() == c && shift.numel() == c, "group_norm_3d: affine length != c");

    const int64_t cg = c / groups, hw = h * w;
    const int64_t group_count = t * cg * hw;
    std::vector<double> mean(static_cast<size_t>(groups), 0.0), inv_std(static_cast<size_t>(groups));
    const T* px = input.data();
    for (int64_t g = 0; g < groups; ++g) {
        double acc = 0;
        for (int64_t f = 0; f < t; ++f)
            for (int64_t ch = g * cg; ch < (g + 1) * cg; ++ch) {
                const T* row = px + (f * c + ch) * hw;
                for (int64_t i = 0; i < hw; ++i) acc += static_cast<double>(row[i]);
            }
        mean[g] = acc / static_cast<double>(group_count);
        double var = 0;
        for (int64_t f = 0; f < t; ++f)
            for (int64_t ch = g * cg; ch < (g + 1) * cg; ++ch) {
                const T* row = px + (f * c + ch) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    double d = static_cast<double>(row[i]) - mean[g];
                    var += d * d;
                }
            }
        var /= static_cast<double>(group_count);
        inv_std[g] = 1.0 / std::sqrt(var + static_cast<double>(eps));
    }

    Tensor<T> out = Tensor<T>::zeros(input.shape());
    T* po = out.data();
    for (int64_t f = 0; f < t; ++f)
        for (int64_t ch = 0; ch < c; ++ch) {
            int64_t g = ch / cg;
            const T m = static_cast<T>(mean[g]), is_ = static_cast<T>(inv_std[g]);
            const T ga = gain.data()[ch], sh = shift.data()[ch];
            const T* row = px + (f * c + ch) * hw;
            T* orow = po + (f * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) orow[i] = ga * (row[i] - m) * is_ + sh;
        }

    auto* tape = GradTape<T>::active();
    bool need = input.needs_grad() || gain.needs_grad() || shift.needs_grad();
    if (tape && need) {
        out.mark_needs_grad();
        tape->record([input, gain, shift, out, mean, inv_std, t, c, h, w, cg]() mutable {
            const int64_t hw = h * w, groups = c / cg;
            const int64_t group_count = t * cg * hw;
            const T* g = out.grad();
            const T* px2 = input.data();
            // per-channel reductions for dgain/dshift
            if (gain.needs_grad() || shift.needs_grad()) {
                for (int64_t ch = 0; ch < c; ++ch) {
                    int64_t grp = ch / cg;
                    double acc_gy = 0, acc_g = 0;
                    for (int64_t f = 0; f < t; ++f) {
                        const T* gr = g + (f * c + ch) * hw;
                        const T* xr = px2 + (f * c + ch) * hw;
                        for (int64_t i = 0; i < hw; ++i) {
                            double yhat = (static_cast<double>(xr[i]) - mean[grp]) * inv_std[grp];
                            acc_gy += static_cast<double>(gr[i]) * yhat;
                            acc_g += static_cast<double>(gr[i]);
                        }
                    }
                    if (gain.needs_grad()) gain.grad()[ch] += static_cast<T>(acc_gy);
                    if (shift.needs_grad()) shift.grad()[ch] += static_cast<T>(acc_g);
                }
            }
            if (input.needs_grad()) {
                T* gx = input.grad();
                for (int64_t grp = 0; grp < groups; ++grp) {
                    double sum_dy = 0, sum_dyy = 0;
                    for (int64_t f = 0; f < t; ++f)
                        for (int64_t ch = grp * cg; ch < (grp + 1) * cg; ++ch) {
                            const T* gr = g + (f * c + ch) * hw;
                            const T* xr = px2 + (f * c + ch) * hw;
                            const double ga = static_cast<double>(gain.data()[ch]);
                            for (int64_t i = 0; i < hw; ++i) {
                                double dy = static_cast<double>(gr[i]) * ga;
                                double yhat = (static_cast<double>(xr[i]) - mean[grp]) * inv_std[grp];
                                sum_dy += dy;
                                sum_dyy += dy * yhat;
                            }
                        }
                    double m_dy = sum_dy / group_count, m_dyy = sum_dyy / group_count;
                    for (int64_t f = 0; f < t; ++f)
                        for (int64_t ch = grp * cg; ch < (grp + 1) * cg; ++ch) {
                            const T* gr = g + (f * c + ch) * hw;
                            const T* xr = px2 + (f * c + ch) * hw;
                            T* gxr = gx + (f * c + ch) * hw;
                            const double ga = static_cast<double>(gain.data()[ch]);
                            for (int64_t i = 0; i < hw; ++i) {
                                double dy = static_cast<double>(gr[i]) * ga;
                                double yhat = (static_cast<double>(xr[i]) - mean[grp]) * inv_std[grp];
                                gxr[i] += static_cast<T>(inv_std[grp] * (dy - m_dy - yhat * m_dyy));
                            }
                        }
                }
            }
        });
    }
    return out;
}

// broadcast add of a per-channel vector over [t,c,h,w]
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    check_shape(x.shape().size() == 4, "add_channel_bias: input must be [t,c,h,w]");
    int64_t t = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    check_shape(bias.numel() == c, "add_channel_bias: bias length != c");
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    for (int64_t f = 0; f < t; ++f)
        for (int64_t ch = 0; ch < c; ++ch) {
            const T b = bias.data()[ch];
            const T* r = px + (f * c + ch) * hw;
            T* o = po + (f * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) o[i] = r[i] + b;
        }
    if (auto* tape = GradTape<T>::active(); tape && (x.needs_grad() || bias.needs_grad())) {
        out.mark_needs_grad();
        tape->record([x, bias, out, t, c, hw]() mutable {
            const T* g = out.grad();
            if (x.needs_grad()) {
                T* gx = x.grad();
                for (int64_t i = 0; i < out.numel(); ++i) gx[i] += g[i];
            }
            if (bias.needs_grad()) {
                T* gb = bias.grad();
                for (int64_t f = 0; f < t; ++f)
                    for (int64_t ch = 0; ch < c; ++ch) {
                        const T* gr = g + (f * c + ch) * hw;
                        double acc = 0;
                        for (int64_t i = 0; i < hw; ++i) acc += static_cast<double>(gr[i]);
                        gb[ch] += static_cast<T>(acc);
                    }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
    check_shape(!xs.empty(), "concat_channels: no inputs");
    int64_t t = xs[0].shape()[0], h = xs[0].shape()[2], w = xs[0].shape()[3];
    int64_t c_total = 0;
    for (const auto& x : xs) {
        check_shape(x.shape().size() == 4 && x.shape()[0] == t && x.shape()[2] == h &&
                        x.shape()[3] == w,
                    "concat_channels: mismatched frame dims");
        c_total += x.shape()[1];
    }
    Tensor<T> out = Tensor<T>::zeros({t, c_total, h, w});
    const int64_t hw = h * w;
    bool need = false;
    for (int64_t f = 0; f < t; ++f) {
        int64_t off = 0;
        for (const auto& x : xs) {
            int64_t ci = x.shape()[1];
            std::copy(x.data() + f * ci * hw, x.data() + (f + 1) * ci * hw,
                      out.data() + (f * c_total + off) * hw);
            off += ci;
        }
    }
    for (const auto& x : xs) need = need || x.needs_grad();
    if (auto* tape = GradTape<T>::active(); tape && need) {
        out.mark_needs_grad();
        tape->record([xs, out, t, c_total, hw]() mutable {
            const T* g = out.grad();
            for (int64_t f = 0; f < t; ++f) {
                int64_t off = 0;
                for (auto& x : xs) {
                    int64_t ci = x.shape()[1];
                    if (x.needs_grad()) {
                        T* gx = x.grad() + f * ci * hw;
                        const T* gs = g + (f * c_total + off) * hw;
                        for (int64_t i = 0; i < ci * hw; ++i) gx[i] += gs[i];
                    }
                    off += ci;
                }
            }
        });
    }
    return out;
}

// out = base + scale * weight_map (x) delta, where weight_map is an optional
// [h,w] plane broadcast over frames and channels. Carries the spatial-aware
// insertion factor alpha(p) of the adapter path.
template <typename T>
Tensor<T> scaled_residual(const Tensor<T>& base, const Tensor<T>& delta, T scale,
                          const std::vector<T>* weight_map = nullptr) {
    check_same_shape(base, delta, "scaled_residual");
    const auto& s = base.shape();
    check_shape(s.size() == 4, "scaled_residual: expects [t,c,h,w]");
    int64_t t = s[0], c = s[1], hw = s[2] * s[3];
    if (weight_map)
        check_shape(static_cast<int64_t>(weight_map->size()) == hw,
                    "scaled_residual: weight map size != h*w");
    Tensor<T> out = Tensor<T>::zeros(s);
    const T* pb = base.data();
    const T* pd = delta.data();
    T* po = out.data();
    for (int64_t f = 0; f < t; ++f)
        for (int64_t ch = 0; ch < c; ++ch) {
            const T* b = pb + (f * c + ch) * hw;
            const T* d = pd + (f * c + ch) * hw;
            T* o = po + (f * c + ch) * hw;
            if (weight_map) {
                const T* wm = weight_map->data();
                for (int64_t i = 0; i < hw; ++i) o[i] = b[i] + scale * wm[i] * d[i];
            } else {
                for (int64_t i = 0; i < hw; ++i) o[i] = b[i] + scale * d[i];
            }
        }
    if (auto* tape = GradTape<T>::active(); tape && (base.needs_grad() || delta.needs_grad())) {
        out.mark_needs_grad();
        std::vector<T> wm_copy = weight_map ? *weight_map : std::vector<T>{};
        tape->record([base, delta, out, scale, wm_copy, t, c, hw]() mutable {
            const T* g = out.grad();
            if (base.needs_grad()) {
                T* gb = base.grad();
                for (int64_t i = 0; i < out.numel(); ++i) gb[i] += g[i];
            }
            if (delta.needs_grad()) {
                T* gd = delta.grad();
                for (int64_t f = 0; f < t; ++f)
                    for (int64_t ch = 0; ch < c; ++ch) {
                        const T* gr = g + (f * c + ch) * hw;
                        T* gdr = gd + (f * c + ch) * hw;
                        if (!wm_copy.empty())
                            for (int64_t i = 0; i < hw; ++i)
                                gdr[i] += scale * wm_copy[i] * gr[i];
                        else
                            for (int64_t i = 0; i < hw; ++i) gdr[i] += scale * gr[i];
                    }
            }
        });
    }
    return out;
}

// y = W x + b for a constant input vector; gradients flow to W and b.
template <typename T>
Tensor<T> linear_vec(const Tensor<T>& weight, const Tensor<T>& bias, const std::vector<T>& x) {
    check_shape(weight.shape().size() == 2, "linear_vec: weight must be 2-D");
    int64_t out_dim = weight.shape()[0], in_dim = weight.shape()[1];
    check_shape(static_cast<int64_t>(x.size()) == in_dim, "linear_vec: input length mismatch");
    check_shape(bias.numel() == out_dim, "linear_vec: bias length mismatch");
    Tensor<T> out = Tensor<T>::zeros({out_dim});
    const T* pw = weight.data();
    T* po = out.data();
    for (int64_t o = 0; o < out_dim; ++o) {
        double acc = static_cast<double>(bias.data()[o]);
        for (int64_t i = 0; i < in_dim; ++i)
            acc += static_cast<double>(pw[o * in_dim + i]) * static_cast<double>(x[i]);
        po[o] = static_cast<T>(acc);
    }
    if (auto* tape = GradTape<T>::active(); tape && (weight.needs_grad() || bias.needs_grad())) {
        out.mark_needs_grad();
        tape->record([weight, bias, out, x, out_dim, in_dim]() mutable {
            const T* g = out.grad();
            if (weight.needs_grad()) {
                T* gw = weight.grad();
                for (int64_t o = 0; o < out_dim; ++o)
                    for (int64_t i = 0; i < in_dim; ++i) gw[o * in_dim + i] += g[o] * x[i];
            }
            if (bias.needs_grad()) {
                T* gb = bias.grad();
                for (int64_t o = 0; o < out_dim; ++o) gb[o] += g[o];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
    check_shape(a.shape().size() == 2, "transpose2d: expects 2-D");
    int64_t r = a.shape()[0], c = a.shape()[1];
    Tensor<T> out = Tensor<T>::zeros({c, r});
    detail::transpose(a.data(), out.data(), r, c);
    if (auto* tape = GradTape<T>::active(); tape && a.needs_grad()) {
        out.mark_needs_grad();
        tape->record([a, out, r, c]() mutable {
            const T* g = out.grad();
            T* ga = a.grad();
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
        });
    }
    return out;
}

// copying reshape; same element order, new extents
template <typename T>
Tensor<T> reshape_copy(const Tensor<T>& a, Shape shape) {
    check_shape(motia::numel(shape) == a.numel(), "reshape_copy: element count mismatch");
    Tensor<T> out = Tensor<T>::from_vector(std::move(shape),
                                           std::vector<T>(a.data(), a.data() + a.numel()));
    if (auto* tape = GradTape<T>::active(); tape && a.needs_grad()) {
        out.mark_needs_grad();
        tape->record([a, out]() mutable {
            const T* g = out.grad();
            T* ga = a.grad();
            for (int64_t i = 0; i < a.numel(); ++i) ga[i] += g[i];
        });
    }
    return out;
}

// Sinusoidal timestep features; deterministic in t and injective over {1..T}
// for any reasonable embedding width.
template <typename T>
std::vector<T> sinusoidal_embedding(int64_t t, int64_t dim) {
    if (dim < 2 || dim % 2 != 0) throw ConfigError("sinusoidal_embedding: dim must be even >= 2");
    int64_t half = dim / 2;
    std::vector<T> emb(static_cast<size_t>(dim));
    for (int64_t i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        double ang = static_cast<double>(t) * freq;
        emb[static_cast<size_t>(i)] = static_cast<T>(std::sin(ang));
        emb[static_cast<size_t>(half + i)] = static_cast<T>(std::cos(ang));
    }
    return emb;
}

}  // namespace motia
