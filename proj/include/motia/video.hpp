#pragma once

#include <filesystem>
#include <fstream>

#include "io.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace motia {

// Canonical video: [t, d, h, w] row-major float32 with values in [0,1].
using Video = Tensor<float>;

struct VideoDims {
    int64_t t, d, h, w;
};

inline VideoDims video_dims(const Video& v) {
    check_shape(v.shape().size() == 4, "video must be [t,d,h,w]");
    return {v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3]};
}

enum class ShapeKind { disc, square };

struct ShapeSpec {
    ShapeKind kind = ShapeKind::disc;
    int64_t size = 4;        // half-extent (square) or radius (disc)
    float intensity = 0.8f;
    int64_t y = 0, x = 0;    // initial center
    int64_t vy = 0, vx = 0;  // pixels per frame, integer
};

struct ShapesSceneConfig {
    int64_t frames = 16;
    int64_t height = 32;
    int64_t width = 32;
    int64_t channels = 1;
    float background = 0.25f;
    // when background_hi > background, the background level is drawn uniformly
    // from [background, background_hi); used by the pretraining corpus
    float background_hi = 0.0f;
    int64_t num_shapes = 3;
    uint64_t seed = 0;
    std::vector<ShapeSpec> shapes;  // explicit scene; sampled from seed when empty
};

struct SceneMetadata {
    float background = 0.0f;
    std::vector<ShapeSpec> shapes;
};

// Deterministic hard-edged render; shapes translate by integer velocities with
// toroidal wrap so they stay renderable forever.
inline std::pair<Video, SceneMetadata> gen_moving_shapes(const ShapesSceneConfig& cfg) {
    if (cfg.frames < 1 || cfg.height < 1 || cfg.width < 1 || cfg.channels < 1)
        throw ConfigError("gen_moving_shapes: dims must be >= 1");
    RngStream rs(cfg.seed, "scene");
    uint64_t ctr = 0;
    SceneMetadata meta;
    meta.background = cfg.background_hi > cfg.background
                          ? cfg.background +
                                static_cast<float>(rs.uniform(ctr++)) * (cfg.background_hi - cfg.background)
                          : cfg.background;
    if (!cfg.shapes.empty()) {
        meta.shapes = cfg.shapes;
    } else {
        for (int64_t i = 0; i < cfg.num_shapes; ++i) {
            ShapeSpec s;
            s.kind = rs.uniform_int(ctr++, 0, 1) == 0 ? ShapeKind::disc : ShapeKind::square;
            s.size = rs.uniform_int(ctr++, 3, 6);
            s.intensity = 0.55f + static_cast<float>(rs.uniform(ctr++)) * 0.45f;
            s.y = rs.uniform_int(ctr++, 0, cfg.height - 1);
            s.x = rs.uniform_int(ctr++, 0, cfg.width - 1);
            s.vy = rs.uniform_int(ctr++, -2, 2);
            s.vx = rs.uniform_int(ctr++, -2, 2);
            meta.shapes.push_back(s);
        }
    }

    Video v = Video::filled({cfg.frames, cfg.channels, cfg.height, cfg.width}, meta.background);
    const int64_t h = cfg.height, w = cfg.width, hw = h * w;
    auto wrap = [](int64_t a, int64_t m) { return ((a % m) + m) % m; };
    for (int64_t f = 0; f < cfg.frames; ++f) {
        float* frame = v.data() + f * cfg.channels * hw;
        for (const auto& s : meta.shapes) {
            int64_t cy = wrap(s.y + s.vy * f, h);
            int64_t cx = wrap(s.x + s.vx * f, w);
            for (int64_t dy = -s.size; dy <= s.size; ++dy)
                for (int64_t dx = -s.size; dx <= s.size; ++dx) {
                    if (s.kind == ShapeKind::disc && dy * dy + dx * dx > s.size * s.size) continue;
                    int64_t yy = wrap(cy + dy, h), xx = wrap(cx + dx, w);
                    for (int64_t c = 0; c < cfg.channels; ++c) frame[c * hw + yy * w + xx] = s.intensity;
                }
        }
    }
    return {v, meta};
}

// ---- .vtn container ----

inline void save_vtn(const Video& video, const std::string& path) {
    auto d = video_dims(video);
    BinaryWriter wtr;
    wtr.magic("VTEN");
    wtr.u32(1);
    wtr.u32(static_cast<uint32_t>(d.t));
    wtr.u32(static_cast<uint32_t>(d.d));
    wtr.u32(static_cast<uint32_t>(d.h));
    wtr.u32(static_cast<uint32_t>(d.w));
    wtr.f32_array(video.data(), static_cast<size_t>(video.numel()));
    wtr.finish(path);
}

inline Video load_vtn(const std::string& path) {
    BinaryReader rdr(path);
    rdr.expect_magic("VTEN", path);
    uint32_t version = rdr.u32();
    if (version != 1)
        throw IoError("unsupported .vtn version " + std::to_string(version) + ": " + path);
    int64_t t = rdr.u32(), d = rdr.u32(), h = rdr.u32(), w = rdr.u32();
    if (t < 1 || d < 1 || h < 1 || w < 1) throw IoError("corrupt file (bad dims): " + path);
    int64_t n = t * d * h * w;
    if (rdr.remaining() != static_cast<size_t>(n) * 4)
        throw IoError("corrupt file (dims inconsistent with payload): " + path);
    Video v = Video::zeros({t, d, h, w});
    rdr.f32_array(v.data(), static_cast<size_t>(n));
    return v;
}

// ---- PGM/PPM frame directories (binary P5/P6, 8-bit) ----

inline void export_frames(const Video& video, const std::string& dir) {
    auto d = video_dims(video);
    if (d.d != 1 && d.d != 3)
        throw InputError("export_frames: needs d=1 (PGM) or d=3 (PPM), got d=" + std::to_string(d.d));
    std::filesystem::create_directories(dir);
    const int64_t hw = d.h * d.w;
    for (int64_t f = 0; f < d.t; ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d.%s", static_cast<int>(f),
                      d.d == 1 ? "pgm" : "ppm");
        std::ofstream out(std::filesystem::path(dir) / name, std::ios::binary);
        if (!out) throw IoError("cannot open for write: " + dir + "/" + name);
        out << (d.d == 1 ? "P5" : "P6") << "\n" << d.w << " " << d.h << "\n255\n";
        const float* fr = video.data() + f * d.d * hw;
        for (int64_t i = 0; i < hw; ++i)
            for (int64_t c = 0; c < d.d; ++c) {
                float v = fr[c * hw + i];
                int q = static_cast<int>(std::lround(std::min(1.0f, std::max(0.0f, v)) * 255.0f));
                out.put(static_cast<char>(q));
            }
        if (!out) throw IoError("write failed: " + dir + "/" + name);
    }
}

inline Video import_frames(const std::string& dir) {
    std::vector<std::filesystem::path> files;
    if (std::filesystem::is_directory(dir))
        for (const auto& e : std::filesystem::directory_iterator(dir)) {
            auto ext = e.path().extension();
            if (ext == ".pgm" || ext == ".ppm") files.push_back(e.path());
        }
    if (files.empty()) throw InputError("import_frames: no PGM/PPM frames in " + dir);
    std::sort(files.begin(), files.end());

    Video video;
    int64_t h = 0, w = 0, d = 0;
    for (size_t f = 0; f < files.size(); ++f) {
        std::ifstream in(files[f], std::ios::binary);
        if (!in) throw IoError("cannot open: " + files[f].string());
        std::string tag;
        int64_t ww, hh, maxv;
        in >> tag >> ww >> hh >> maxv;
        in.get();  // single whitespace after header
        int64_t dd = tag == "P5" ? 1 : tag == "P6" ? 3 : 0;
        if (dd == 0 || maxv != 255) throw InputError("import_frames: unsupported format in " + files[f].string());
        if (f == 0) {
            h = hh;
            w = ww;
            d = dd;
            video = Video::zeros({static_cast<int64_t>(files.size()), d, h, w});
        } else if (hh != h || ww != w || dd != d) {
            throw InputError("import_frames: mixed frame dimensions in " + dir);
        }
        const int64_t hw = h * w;
        float* fr = video.data() + static_cast<int64_t>(f) * d * hw;
        std::vector<unsigned char> row(static_cast<size_t>(hw * d));
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!in) throw InputError("import_frames: truncated frame " + files[f].string());
        for (int64_t i = 0; i < hw; ++i)
            for (int64_t c = 0; c < d; ++c)
                fr[c * hw + i] = static_cast<float>(row[static_cast<size_t>(i * d + c)]) / 255.0f;
    }
    return video;
}

}  // namespace motia
