#pragma once

#include <cmath>
#include <optional>

#include "video.hpp"

namespace motia {

// PSNR over [0,1]-range videos, optionally restricted to an [h,w] region mask
// (weight > 0 counts the pixel); identical inputs cap at 99 dB.
inline double psnr(const Video& pred, const Video& ref, const Video* region_mask = nullptr) {
    check_same_shape(pred, ref, "psnr");
    auto d = video_dims(pred);
    const int64_t hw = d.h * d.w;
    double se = 0;
    int64_t count = 0;
    if (region_mask) {
        check_shape(region_mask->shape() == Shape{d.h, d.w}, "psnr: region mask must be [h,w]");
        const float* m = region_mask->data();
        for (int64_t f = 0; f < d.t; ++f)
            for (int64_t c = 0; c < d.d; ++c) {
                const float* p = pred.data() + (f * d.d + c) * hw;
                const float* r = ref.data() + (f * d.d + c) * hw;
                for (int64_t i = 0; i < hw; ++i)
                    if (m[i] > 0.0f) {
                        double e = static_cast<double>(p[i]) - static_cast<double>(r[i]);
                        se += e * e;
                        ++count;
                    }
            }
    } else {
        for (int64_t i = 0; i < pred.numel(); ++i) {
            double e = static_cast<double>(pred.data()[i]) - static_cast<double>(ref.data()[i]);
            se += e * e;
        }
        count = pred.numel();
    }
    if (count == 0) throw InputError("psnr: empty region");
    double mse = se / static_cast<double>(count);
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

inline const std::vector<double>& ssim_window() {
    static const std::vector<double> win = [] {
        std::vector<double> w(11);
        double sum = 0;
        for (int i = 0; i < 11; ++i) {
            double d = i - 5;
            w[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            sum += w[static_cast<size_t>(i)];
        }
        for (auto& v : w) v /= sum;
        return w;
    }();
    return win;
}

// separable 11-tap valid-region filter: [h,w] -> [h-10, w-10]
inline void ssim_filter(const std::vector<double>& img, int64_t h, int64_t w,
                        std::vector<double>& out, std::vector<double>& tmp) {
    const auto& win = ssim_window();
    const int64_t wv = w - 10, hv = h - 10;
    tmp.assign(static_cast<size_t>(h * wv), 0.0);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < wv; ++x) {
            double acc = 0;
            for (int k = 0; k < 11; ++k) acc += win[static_cast<size_t>(k)] * img[static_cast<size_t>(y * w + x + k)];
            tmp[static_cast<size_t>(y * wv + x)] = acc;
        }
    out.assign(static_cast<size_t>(hv * wv), 0.0);
    for (int64_t y = 0; y < hv; ++y)
        for (int64_t x = 0; x < wv; ++x) {
            double acc = 0;
            for (int k = 0; k < 11; ++k) acc += win[static_cast<size_t>(k)] * tmp[static_cast<size_t>((y + k) * wv + x)];
            out[static_cast<size_t>(y * wv + x)] = acc;
        }
}

}  // namespace detail

// Mean SSIM with the standard 11x11 Gaussian window (sigma 1.5) on the [0,1]
// range, evaluated per frame and channel over the valid filter region.
inline double ssim(const Video& pred, const Video& ref) {
    check_same_shape(pred, ref, "ssim");
    auto d = video_dims(pred);
    if (d.h < 11 || d.w < 11) throw InputError("ssim: frame dims below the 11x11 window");
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const int64_t hw = d.h * d.w;
    std::vector<double> x(static_cast<size_t>(hw)), y(static_cast<size_t>(hw)),
        xx(static_cast<size_t>(hw)), yy(static_cast<size_t>(hw)), xy(static_cast<size_t>(hw));
    std::vector<double> mx, my, mxx, myy, mxy, tmp;
    double total = 0;
    int64_t planes = 0;
    for (int64_t f = 0; f < d.t; ++f)
        for (int64_t c = 0; c < d.d; ++c) {
            const float* p = pred.data() + (f * d.d + c) * hw;
            const float* r = ref.data() + (f * d.d + c) * hw;
            for (int64_t i = 0; i < hw; ++i) {
                x[static_cast<size_t>(i)] = p[i];
                y[static_cast<size_t>(i)] = r[i];
                xx[static_cast<size_t>(i)] = static_cast<double>(p[i]) * p[i];
                yy[static_cast<size_t>(i)] = static_cast<double>(r[i]) * r[i];
                xy[static_cast<size_t>(i)] = static_cast<double>(p[i]) * r[i];
            }
            detail::ssim_filter(x, d.h, d.w, mx, tmp);
            detail::ssim_filter(y, d.h, d.w, my, tmp);
            detail::ssim_filter(xx, d.h, d.w, mxx, tmp);
            detail::ssim_filter(yy, d.h, d.w, myy, tmp);
            detail::ssim_filter(xy, d.h, d.w, mxy, tmp);
            double acc = 0;
            for (size_t i = 0; i < mx.size(); ++i) {
                double mu_x = mx[i], mu_y = my[i];
                double sx = mxx[i] - mu_x * mu_x;
                double sy = myy[i] - mu_y * mu_y;
                double sxy = mxy[i] - mu_x * mu_y;
                acc += (2 * mu_x * mu_y + C1) * (2 * sxy + C2) /
                       ((mu_x * mu_x + mu_y * mu_y + C1) * (sx + sy + C2));
            }
            total += acc / static_cast<double>(mx.size());
            ++planes;
        }
    return total / static_cast<double>(planes);
}

}  // namespace motia
