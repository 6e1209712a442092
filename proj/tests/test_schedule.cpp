#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "motia/schedule.hpp"
#include "test_util.hpp"

using namespace motia;
using testutil::approx;

TEST_CASE("linear schedule construction") {
    auto s1 = make_linear_schedule(1, 0.1, 0.1);
    CHECK(approx(s1.alpha_bar(1), 0.9, 1e-15));
    CHECK(s1.alpha_bar(0) == 1.0);

    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    CHECK(s.alpha_bar(1000) < 1e-4);
    // independent accumulation oracle in extended precision
    long double acc = 1.0L;
    for (int64_t t = 1; t <= 1000; ++t) {
        acc *= static_cast<long double>(s.alpha(t));
        double rel = std::fabs(static_cast<double>(acc) - s.alpha_bar(t)) /
                     static_cast<double>(acc);
        CHECK(rel < 1e-12);
    }
    // strictly decreasing alpha_bar, nonnegative posterior betas
    for (int64_t t = 1; t <= 1000; ++t) {
        CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
        CHECK(s.posterior_beta(t) >= 0.0);
    }

    CHECK_THROWS_AS(make_linear_schedule(10, 0.02, 1e-4), ConfigError);
    CHECK_THROWS_AS(make_linear_schedule(0, 1e-4, 0.02), ConfigError);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.02), ConfigError);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.5, 1.0), ConfigError);
}

TEST_CASE("forward noise") {
    auto s = make_linear_schedule(100, 1e-3, 0.05);
    auto x0 = randn<float>({2, 1, 4, 4}, 1);
    auto eps = randn<float>({2, 1, 4, 4}, 2);

    auto same = forward_noise(x0, 0, eps, s);
    CHECK(testutil::bit_identical(same, x0));

    auto zero = Tensor<float>::zeros({2, 1, 4, 4});
    auto scaled = forward_noise(zero, 50, eps, s);
    float c = static_cast<float>(std::sqrt(1.0 - s.alpha_bar(50)));
    for (int64_t i = 0; i < scaled.numel(); ++i)
        CHECK(scaled.data()[i] == c * eps.data()[i]);

    // hand case: abar = 0.25 via a single step of beta 0.75
    auto s2 = make_linear_schedule(1, 0.75, 0.75);
    auto one = Tensor<float>::filled({1}, 1.0f);
    auto noised = forward_noise(one, 1, one, s2);
    CHECK(approx(noised.data()[0], 0.5 + std::sqrt(0.75), 1e-6));

    auto bad = randn<float>({3}, 3);
    CHECK_THROWS_AS(forward_noise(x0, 10, bad, s), ShapeError);
    CHECK_THROWS_AS(forward_noise(x0, 101, eps, s), InputError);
}

TEST_CASE("ddim step") {
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    auto v = randn<double>({8}, 4);

    // zero eps-hat is a pure rescale
    auto zero = Tensor<double>::zeros({8});
    auto r = ddim_step(v, zero, 700, 650, 0.0, Tensor<double>(), s);
    double c = std::sqrt(s.alpha_bar(650) / s.alpha_bar(700));
    for (int64_t i = 0; i < 8; ++i) CHECK(approx(r.data()[i], c * v.data()[i], 1e-12));

    // perfect eps-prediction tracks the forward trajectory exactly
    auto x0 = randn<double>({8}, 5);
    auto eps = randn<double>({8}, 6);
    auto vt = forward_noise(x0, 700, eps, s);
    auto stepped = ddim_step(vt, eps, 700, 650, 0.0, Tensor<double>(), s);
    auto want = forward_noise(x0, 650, eps, s);
    CHECK(testutil::max_abs_diff(stepped, want) < 1e-12);

    // deterministic: same inputs, same outputs
    auto again = ddim_step(vt, eps, 700, 650, 0.0, Tensor<double>(), s);
    CHECK(testutil::bit_identical(stepped, again));

    // sigma bound
    CHECK_THROWS_AS(ddim_step(vt, eps, 700, 0, 0.5, eps, s), ConfigError);
    CHECK_THROWS_AS(ddim_step(vt, eps, 650, 700, 0.0, Tensor<double>(), s), InputError);
}

TEST_CASE("timestep plans") {
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    auto plan = make_timestep_plan(s, 25);
    CHECK(plan.size() == 25);
    CHECK(plan.t_at(0) == 1000);
    CHECK(plan.t_at(24) == 1);
    for (int64_t k = 1; k < 25; ++k) CHECK(plan.t_at(k) < plan.t_at(k - 1));
    for (int64_t k = 0; k < 25; ++k) CHECK(plan.sigma_at(k) == 0.0);

    auto full = make_timestep_plan(s, 1000);
    for (int64_t k = 0; k < 1000; ++k) CHECK(full.t_at(k) == 1000 - k);

    CHECK_THROWS_AS(make_timestep_plan(s, 1001), ConfigError);
    CHECK_THROWS_AS(make_timestep_plan(s, 0), ConfigError);

    // ddpm sigma on the dense plan equals sqrt(posterior beta)
    auto stoch = make_timestep_plan(s, 1000, SigmaMode::ddpm);
    for (int64_t k = 0; k + 1 < 1000; ++k) {
        int64_t t = stoch.t_at(k);
        CHECK(approx(stoch.sigma_at(k), std::sqrt(s.posterior_beta(t)), 1e-12));
    }
    CHECK(stoch.sigma_at(999) == 0.0);
}

TEST_CASE("round trip with true noise recovers x0") {
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    auto plan = make_timestep_plan(s, 1000);
    auto x0 = randn<double>({2, 1, 3, 3}, 7);
    auto eps = randn<double>({2, 1, 3, 3}, 8);
    auto v = forward_noise(x0, 1000, eps, s);
    for (int64_t k = 0; k < plan.size(); ++k)
        v = ddim_step(v, eps, plan.t_at(k), plan.t_prev_at(k), 0.0, Tensor<double>(), s);
    CHECK(testutil::max_abs_diff(v, x0) < 1e-4);

    // subsampled plans track it too
    auto plan25 = make_timestep_plan(s, 25);
    auto v2 = forward_noise(x0, 1000, eps, s);
    for (int64_t k = 0; k < plan25.size(); ++k)
        v2 = ddim_step(v2, eps, plan25.t_at(k), plan25.t_prev_at(k), 0.0, Tensor<double>(), s);
    CHECK(testutil::max_abs_diff(v2, x0) < 1e-4);

    // monotone signal coefficient
    for (int64_t t = 1; t <= 1000; ++t)
        CHECK(std::sqrt(s.alpha_bar(t)) < std::sqrt(s.alpha_bar(t - 1)));
}
