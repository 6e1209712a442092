#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "motia/metrics.hpp"
#include "motia/video.hpp"
#include "test_util.hpp"

using namespace motia;
namespace fs = std::filesystem;

static fs::path tmpdir() {
    auto p = fs::temp_directory_path() / "motia_dm_test";
    fs::create_directories(p);
    return p;
}

TEST_CASE("moving shapes renders") {
    ShapesSceneConfig cfg;
    cfg.frames = 4;
    cfg.shapes = {{ShapeKind::disc, 3, 0.9f, 10, 10, 0, 0}};
    auto [vid, meta] = gen_moving_shapes(cfg);
    // zero velocity: all frames identical
    for (int64_t f = 1; f < 4; ++f)
        for (int64_t i = 0; i < 32 * 32; ++i)
            CHECK(vid.data()[f * 1024 + i] == vid.data()[i]);

    // unit horizontal velocity: frame k equals frame 0 shifted k columns
    cfg.shapes = {{ShapeKind::disc, 3, 0.9f, 10, 10, 0, 1}};
    auto [vid2, meta2] = gen_moving_shapes(cfg);
    for (int64_t f = 0; f < 4; ++f)
        for (int64_t y = 0; y < 32; ++y)
            for (int64_t x = 0; x < 32; ++x)
                CHECK(vid2.data()[f * 1024 + y * 32 + x] ==
                      vid2.data()[y * 32 + (x - f + 32 * 4) % 32]);

    // pixel counts match lattice-point enumeration of the shape footprint
    int64_t disc_area = 0;
    for (int dy = -3; dy <= 3; ++dy)
        for (int dx = -3; dx <= 3; ++dx)
            if (dy * dy + dx * dx <= 9) ++disc_area;
    for (int64_t f = 0; f < 4; ++f) {
        int64_t count = 0;
        for (int64_t i = 0; i < 1024; ++i)
            if (vid2.data()[f * 1024 + i] == 0.9f) ++count;
        CHECK(count == disc_area);
    }

    cfg.shapes = {{ShapeKind::square, 2, 0.7f, 16, 16, 1, 1}};
    auto [vid3, meta3] = gen_moving_shapes(cfg);
    int64_t count = 0;
    for (int64_t i = 0; i < 1024; ++i)
        if (vid3.data()[i] == 0.7f) ++count;
    CHECK(count == 25);

    // seeded random scenes are reproducible
    ShapesSceneConfig rc;
    rc.seed = 9;
    auto [ra, ma] = gen_moving_shapes(rc);
    auto [rb, mb] = gen_moving_shapes(rc);
    CHECK(testutil::bit_identical(ra, rb));
}

TEST_CASE("vtn round trip and corruption") {
    auto dir = tmpdir();
    auto path = (dir / "clip.vtn").string();
    ShapesSceneConfig cfg;
    cfg.seed = 3;
    auto [vid, meta] = gen_moving_shapes(cfg);
    save_vtn(vid, path);
    auto back = load_vtn(path);
    CHECK(testutil::bit_identical(vid, back));

    // foreign magic
    {
        BinaryWriter w;
        w.magic("NOPE");
        w.u32(1);
        w.finish((dir / "bad_magic.vtn").string());
    }
    CHECK_THROWS_AS(load_vtn((dir / "bad_magic.vtn").string()), IoError);

    // dims inconsistent with payload
    {
        BinaryWriter w;
        w.magic("VTEN");
        w.u32(1);
        w.u32(2);
        w.u32(1);
        w.u32(2);
        w.u32(2);
        for (int i = 0; i < 4; ++i) w.f32(0.5f);
        w.finish((dir / "bad_dims.vtn").string());
    }
    CHECK_THROWS_AS(load_vtn((dir / "bad_dims.vtn").string()), IoError);

    // unsupported version
    {
        BinaryWriter w;
        w.magic("VTEN");
        w.u32(7);
        w.u32(1);
        w.u32(1);
        w.u32(1);
        w.u32(1);
        w.f32(0.5f);
        w.finish((dir / "bad_ver.vtn").string());
    }
    CHECK_THROWS_AS(load_vtn((dir / "bad_ver.vtn").string()), IoError);

    // CRC flip
    {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
        bytes[30] ^= 0x40;
        std::ofstream out((dir / "flipped.vtn").string(), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_vtn((dir / "flipped.vtn").string()), IoError);

    // truncation
    {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
        std::ofstream out((dir / "trunc.vtn").string(), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_vtn((dir / "trunc.vtn").string()), IoError);
}

TEST_CASE("frame export/import") {
    auto dir = tmpdir() / "frames";
    fs::remove_all(dir);
    ShapesSceneConfig cfg;
    cfg.frames = 3;
    cfg.seed = 4;
    auto [vid, meta] = gen_moving_shapes(cfg);
    export_frames(vid, dir.string());
    auto back = import_frames(dir.string());
    CHECK(back.shape() == vid.shape());
    CHECK(testutil::max_abs_diff(back, vid) <= 1.0 / 255.0 + 1e-6);

    auto empty = tmpdir() / "empty";
    fs::create_directories(empty);
    CHECK_THROWS_AS(import_frames(empty.string()), InputError);

    // mixed dims rejected
    auto mixed = tmpdir() / "mixed";
    fs::remove_all(mixed);
    fs::create_directories(mixed);
    fs::copy(dir / "frame_0000.pgm", mixed / "frame_0000.pgm");
    {
        std::ofstream out(mixed / "frame_0001.pgm", std::ios::binary);
        out << "P5\n4 4\n255\n";
        for (int i = 0; i < 16; ++i) out.put(static_cast<char>(i));
    }
    CHECK_THROWS_AS(import_frames(mixed.string()), InputError);
}

TEST_CASE("psnr") {
    ShapesSceneConfig cfg;
    cfg.seed = 5;
    auto [a, meta] = gen_moving_shapes(cfg);
    CHECK(psnr(a, a) == 99.0);

    auto b = a.clone();
    for (int64_t i = 0; i < b.numel(); ++i) b.data()[i] = a.data()[i] + 0.1f;
    CHECK(testutil::approx(psnr(a, b), 20.0, 1e-3));
    CHECK(psnr(a, b) == psnr(b, a));

    auto empty_mask = Video::zeros({32, 32});
    CHECK_THROWS_AS(psnr(a, b, &empty_mask), InputError);

    auto half = Video::zeros({32, 32});
    for (int64_t y = 0; y < 32; ++y)
        for (int64_t x = 0; x < 16; ++x) half.data()[y * 32 + x] = 1.0f;
    CHECK(testutil::approx(psnr(a, b, &half), 20.0, 1e-3));

    auto c = randn<float>({2, 1, 8, 8}, 1);
    CHECK_THROWS_AS(psnr(a, c), ShapeError);
}

TEST_CASE("ssim") {
    ShapesSceneConfig cfg;
    cfg.seed = 6;
    auto [a, meta] = gen_moving_shapes(cfg);
    CHECK(ssim(a, a) == 1.0);

    // inverted high-variance image scores poorly
    auto inv = a.clone();
    for (int64_t i = 0; i < inv.numel(); ++i) inv.data()[i] = 1.0f - a.data()[i];
    CHECK(ssim(a, inv) < 0.5);

    // affine-shifted flats: contrast term is 1, luminance term in closed form
    auto f1 = Video::filled({1, 1, 16, 16}, 0.2f);
    auto f2 = Video::filled({1, 1, 16, 16}, 0.8f);
    double expected = (2 * 0.2 * 0.8 + 0.01 * 0.01) / (0.04 + 0.64 + 0.01 * 0.01);
    CHECK(testutil::approx(ssim(f1, f2), expected, 1e-6));

    auto tiny = Video::filled({1, 1, 8, 8}, 0.5f);
    CHECK_THROWS_AS(ssim(tiny, tiny), InputError);
}
