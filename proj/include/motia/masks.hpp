#pragma once

#include "rng.hpp"
#include "video.hpp"

namespace motia {

// Rectangular boundary mask: margins shaved off each side, interior known
// (1), border unknown (0). Constant across the frames of a clip.
struct BoundaryMask {
    int64_t top = 0, bottom = 0, left = 0, right = 0;  // margins in pixels
    int64_t h = 0, w = 0;
    Video mask;  // [h, w], 1 = known

    int64_t known_top() const { return top; }
    int64_t known_bottom() const { return h - bottom; }
    int64_t known_left() const { return left; }
    int64_t known_right() const { return w - right; }
};

inline BoundaryMask make_boundary_mask(int64_t h, int64_t w, int64_t top, int64_t bottom,
                                       int64_t left, int64_t right) {
    if (top < 0 || bottom < 0 || left < 0 || right < 0 || top + bottom >= h || left + right >= w)
        throw ConfigError("boundary mask: margins leave no known region");
    BoundaryMask m;
    m.top = top;
    m.bottom = bottom;
    m.left = left;
    m.right = right;
    m.h = h;
    m.w = w;
    m.mask = Video::zeros({h, w});
    for (int64_t y = top; y < h - bottom; ++y)
        for (int64_t x = left; x < w - right; ++x) m.mask.data()[y * w + x] = 1.0f;
    return m;
}

struct MarginLimits {
    double top = 0.45, bottom = 0.45, left = 0.45, right = 0.45;

    void validate() const {
        for (double v : {top, bottom, left, right})
            if (v < 0.0 || v >= 0.5) throw ConfigError("margin limits must lie in [0, 0.5)");
    }
};

// Each margin drawn uniformly over {0..floor(limit * dim)}; counter selects
// the draw so iterations are replayable.
inline BoundaryMask random_boundary_mask(int64_t h, int64_t w, const MarginLimits& limits,
                                         const RngStream& rs, uint64_t counter_base = 0) {
    limits.validate();
    int64_t top = rs.uniform_int(counter_base + 0, 0, static_cast<int64_t>(limits.top * static_cast<double>(h)));
    int64_t bottom = rs.uniform_int(counter_base + 1, 0, static_cast<int64_t>(limits.bottom * static_cast<double>(h)));
    int64_t left = rs.uniform_int(counter_base + 2, 0, static_cast<int64_t>(limits.left * static_cast<double>(w)));
    int64_t right = rs.uniform_int(counter_base + 3, 0, static_cast<int64_t>(limits.right * static_cast<double>(w)));
    return make_boundary_mask(h, w, top, bottom, left, right);
}

}  // namespace motia
