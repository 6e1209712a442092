#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "motia/adaptation.hpp"
#include "test_util.hpp"

using namespace motia;
using testutil::approx;

namespace {

DenoiserNet<float> small_pretrained_net() {
    DenoiserConfig cfg;
    cfg.width = 8;
    cfg.blocks = 2;
    cfg.embed_dim = 16;
    cfg.channels = 1;
    cfg.groups = 2;
    cfg.seed = 77;
    auto net = build_denoiser<float>(cfg);
    auto sched = make_linear_schedule(1000, 1e-4, 0.02);
    PretrainConfig pc;
    pc.scene = default_corpus_scene();
    pc.scene.height = 16;
    pc.scene.width = 16;
    pc.scene.frames = 8;
    pretrain_base(net, pc, sched, 300, 78);
    return net;
}

Video small_clip() {
    ShapesSceneConfig sc;
    sc.frames = 8;
    sc.height = 16;
    sc.width = 16;
    sc.background = 0.5f;
    sc.shapes = {{ShapeKind::disc, 3, 0.15f, 4, 12, 1, 0},
                 {ShapeKind::square, 2, 0.3f, 10, 4, 0, 1}};
    return gen_moving_shapes(sc).first;
}

AdaptConfig small_adapt_cfg() {
    AdaptConfig cfg;
    cfg.iterations = 60;
    cfg.lr = 1e-3;
    cfg.rank = 4;
    cfg.clip_length = 8;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("random boundary masks") {
    RngStream rs(3, "test/mask");
    MarginLimits zero{0, 0, 0, 0};
    auto full = random_boundary_mask(16, 16, zero, rs, 0);
    for (int64_t i = 0; i < 256; ++i) CHECK(full.mask.data()[i] == 1.0f);

    MarginLimits quarter{0.25, 0.25, 0.25, 0.25};
    std::array<int64_t, 5> counts{};
    for (int64_t d = 0; d < 1000; ++d) {
        auto m = random_boundary_mask(16, 16, quarter, rs, 4 * static_cast<uint64_t>(d) + 100);
        CHECK(m.top >= 0);
        CHECK(m.top <= 4);
        CHECK(m.bottom <= 4);
        CHECK(m.left <= 4);
        CHECK(m.right <= 4);
        counts[static_cast<size_t>(m.top)] += 1;
        // known area lower bound from worst-case margins
        int64_t area = (16 - m.top - m.bottom) * (16 - m.left - m.right);
        CHECK(area >= (16 - 8) * (16 - 8));
        // mask tensor consistent with margins
        for (int64_t y = 0; y < 16; ++y)
            for (int64_t x = 0; x < 16; ++x) {
                bool known = y >= m.top && y < 16 - m.bottom && x >= m.left && x < 16 - m.right;
                CHECK(m.mask.data()[y * 16 + x] == (known ? 1.0f : 0.0f));
            }
    }
    for (int64_t v = 0; v <= 4; ++v)
        CHECK(approx(static_cast<double>(counts[static_cast<size_t>(v)]) / 1000.0, 0.2, 0.05));

    MarginLimits bad{0.6, 0.0, 0.0, 0.0};
    CHECK_THROWS_AS(random_boundary_mask(16, 16, bad, rs, 0), ConfigError);
}

TEST_CASE("augmentation transforms") {
    auto vid = small_clip();
    AugmentPolicy ident;
    auto same = augment(vid, ident, RngStream(1, "aug"), 0);
    CHECK(testutil::bit_identical(same, vid));

    auto flipped = motia::detail::flip_horizontal(vid);
    auto twice = motia::detail::flip_horizontal(flipped);
    CHECK(testutil::bit_identical(twice, vid));

    auto constant = Video::filled({4, 1, 16, 16}, 0.37f);
    auto cropped = motia::detail::crop_resize(constant, 9, 11, 2, 3);
    CHECK(testutil::max_abs_diff(cropped, constant) < 1e-6);

    AugmentPolicy bad;
    bad.p_identity = 0.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("adaptation step freezes the base and replays exactly") {
    auto net = small_pretrained_net();
    auto sched = make_linear_schedule(1000, 1e-4, 0.02);
    auto vid = small_clip();
    auto cfg = small_adapt_cfg();
    cfg.iterations = 5;

    auto base_before = net.parameters();
    std::vector<std::vector<float>> snapshot;
    for (auto& p : base_before)
        snapshot.emplace_back(p.data(), p.data() + p.numel());

    auto [set_a, trace_a] = adapt(net, vid, cfg, sched);
    auto [set_b, trace_b] = adapt(net, vid, cfg, sched);
    CHECK(trace_a == trace_b);
    for (auto& [name, a] : set_a.adapters) {
        CHECK(testutil::bit_identical(a.w_down, set_b.adapters[name].w_down));
        CHECK(testutil::bit_identical(a.w_up, set_b.adapters[name].w_up));
    }

    // frozen base: every base parameter identical after adaptation
    auto base_after = net.parameters();
    for (size_t i = 0; i < base_after.size(); ++i)
        for (int64_t j = 0; j < base_after[i].numel(); ++j)
            CHECK(base_after[i].data()[j] == snapshot[i][static_cast<size_t>(j)]);

    // adapters actually moved
    bool moved = false;
    for (auto& [name, a] : set_a.adapters)
        for (int64_t i = 0; i < a.w_up.numel(); ++i) moved = moved || a.w_up.data()[i] != 0.0f;
    CHECK(moved);

    // trivial loss identity used by the objective
    auto e = randn<float>({2, 1, 4, 4}, 9);
    CHECK(mse_loss(e, e).item() == 0.0f);
}

TEST_CASE("zero iterations leave adapters at init") {
    auto net = small_pretrained_net();
    auto sched = make_linear_schedule(1000, 1e-4, 0.02);
    auto cfg = small_adapt_cfg();
    cfg.iterations = 0;
    auto [set, trace] = adapt(net, small_clip(), cfg, sched);
    CHECK(trace.empty());
    for (auto& [name, a] : set.adapters)
        for (int64_t i = 0; i < a.w_up.numel(); ++i) CHECK(a.w_up.data()[i] == 0.0f);
}

TEST_CASE("adaptation descends and beats the zero-adapter baseline held out") {
    auto net = small_pretrained_net();
    auto sched = make_linear_schedule(1000, 1e-4, 0.02);
    auto vid = small_clip();
    auto cfg = small_adapt_cfg();
    cfg.iterations = 400;
    auto [set, trace] = adapt(net, vid, cfg, sched);

    double head = 0, tail = 0;
    for (int i = 0; i < 50; ++i) {
        head += trace[static_cast<size_t>(i)];
        tail += trace[trace.size() - 50 + static_cast<size_t>(i)];
    }
    CHECK(tail < head);

    MarginLimits limits;
    auto trained = eval_pseudo_outpaint_loss(net, &set, vid, limits, sched, 99, 50);
    auto baseline = eval_pseudo_outpaint_loss(net, static_cast<const AdapterSet<float>*>(nullptr),
                                              vid, limits, sched, 99, 50);
    CHECK(trained < baseline);
}

TEST_CASE("serialization order does not affect training") {
    auto net = small_pretrained_net();
    auto sched = make_linear_schedule(1000, 1e-4, 0.02);
    auto vid = small_clip();
    auto cfg = small_adapt_cfg();
    cfg.iterations = 3;
    auto [set, trace] = adapt(net, vid, cfg, sched);

    auto dir = std::filesystem::temp_directory_path() / "motia_adapt_test";
    std::filesystem::create_directories(dir);
    auto path = (dir / "mid.mlra").string();
    save_adapters(set, path);
    auto reloaded = load_adapters<float>(path);

    // continue one more step on both copies: identical losses
    auto run_step = [&](AdapterSet<float>& s) {
        auto params = s.parameters();
        for (auto& p : params) p.set_requires_grad(true);
        AdamState<float> opt;
        opt.lr = cfg.lr;
        opt.weight_decay = cfg.weight_decay;
        opt.init(params);
        return adaptation_step(net, s, vid, cfg, sched, params, opt, 3);
    };
    float la = run_step(set);
    float lb = run_step(reloaded);
    CHECK(la == lb);
}
