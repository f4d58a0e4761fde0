#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "dmamba/gradcheck.hpp"
#include "dmamba/ops.hpp"
#include "dmamba/ssm.hpp"
#include "helpers.hpp"

using namespace dmamba;
using testutil::random_tensor;

TEST_CASE("zoh analytic cases") {
    const std::vector<double> a{-1.0};
    const std::vector<double> b{1.0};
    auto d = zoh_discretize(a, b, std::log(2.0));
    CHECK(d.a_bar[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d.b_bar[0] == doctest::Approx(0.5).epsilon(1e-12));

    // General case against the closed forms.
    const std::vector<double> a2{-0.3, -2.7};
    const std::vector<double> b2{1.5, -0.8};
    const double delta = 0.37;
    auto d2 = zoh_discretize(a2, b2, delta);
    for (size_t i = 0; i < 2; ++i) {
        const double abar = std::exp(delta * a2[i]);
        CHECK(d2.a_bar[i] == doctest::Approx(abar).epsilon(1e-12));
        CHECK(d2.b_bar[i] == doctest::Approx((abar - 1.0) / a2[i] * b2[i]).epsilon(1e-12));
    }

    CHECK_THROWS_AS(zoh_discretize(a, b, 0.0), ValueError);
    CHECK_THROWS_AS(zoh_discretize(a, b, -0.1), ValueError);
}

TEST_CASE("zoh series limit at tiny delta") {
    const std::vector<double> a{-1.0, -3.0, -0.2};
    const std::vector<double> b{2.0, -1.0, 0.5};
    auto d = zoh_discretize(a, b, 1e-12);
    for (size_t i = 0; i < 3; ++i) {
        const double expected = 1e-12 * b[i];
        CHECK(std::fabs(d.b_bar[i] - expected) <= 1e-15 * std::fabs(expected));
    }

    // Relative deviation from delta*b vanishes as delta -> 0.
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const double av = rng.uniform(-10.0, -0.1);
        const double bv = rng.uniform(-2.0, 2.0);
        auto dd = zoh_discretize(std::vector<double>{av}, std::vector<double>{bv}, 1e-6);
        const double rel = std::fabs(dd.b_bar[0] - 1e-6 * bv) / std::fabs(1e-6 * bv);
        CHECK(rel < 1e-5);
    }
}

TEST_CASE("recurrence matches the hand-evaluated geometric sequence") {
    DiscreteSSM d{{0.5}, {1.0}};
    const std::vector<double> c{1.0};
    const std::vector<double> x{1.0, 0.0, 0.0};
    auto y = ssm_recurrence(d, c, x);
    CHECK(y == std::vector<double>{1.0, 0.5, 0.25});

    auto zeros = ssm_recurrence(d, c, std::vector<double>{0, 0, 0, 0});
    for (double v : zeros) CHECK(v == 0.0);

    // Memoryless when the state decays instantly.
    DiscreteSSM memoryless{{0.0}, {0.7}};
    const std::vector<double> xs{1.0, -2.0, 3.0};
    auto ym = ssm_recurrence(memoryless, std::vector<double>{2.0}, xs);
    for (size_t t = 0; t < xs.size(); ++t)
        CHECK(ym[t] == doctest::Approx(2.0 * 0.7 * xs[t]).epsilon(1e-15));

    CHECK_THROWS_AS(ssm_recurrence(d, c, x, std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST_CASE("conv kernel values and impulse-response identity") {
    DiscreteSSM d{{0.5}, {1.0}};
    auto k = ssm_conv_kernel(d, std::vector<double>{1.0}, 3);
    CHECK(k == std::vector<double>{1.0, 0.5, 0.25});

    auto kz = ssm_conv_kernel(d, std::vector<double>{0.0}, 5);
    for (double v : kz) CHECK(v == 0.0);

    // Two-state kernel equals the recurrence impulse response.
    DiscreteSSM d2{{0.9, 0.4}, {1.0, -0.5}};
    const std::vector<double> c2{0.7, 1.3};
    auto k2 = ssm_conv_kernel(d2, c2, 16);
    std::vector<double> impulse(16, 0.0);
    impulse[0] = 1.0;
    auto resp = ssm_recurrence(d2, c2, impulse);
    CHECK(testutil::max_abs_diff(k2, resp) < 1e-14);
}

TEST_CASE("causal convolution basics") {
    const std::vector<double> kernel{1.0, 0.5, 0.25, 0.125};
    std::vector<double> impulse{1.0, 0.0, 0.0, 0.0};
    auto y = ssm_apply_conv(impulse, kernel);
    CHECK(testutil::allclose(y, kernel));

    std::vector<double> identity{1.0, 0.0, 0.0, 0.0};
    std::vector<double> x{0.3, -0.7, 2.0, 1.1};
    CHECK(testutil::allclose(ssm_apply_conv(x, identity), x));

    CHECK_THROWS_AS(ssm_apply_conv(x, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("recurrence and convolution agree for time-invariant systems") {
    Rng rng(3);
    double worst = 0.0;
    for (int trial = 0; trial < 25; ++trial) {
        const int64_t n = rng.uniform_int(1, 16);
        const int64_t len = rng.uniform_int(2, 128);
        std::vector<double> a(static_cast<size_t>(n)), b(static_cast<size_t>(n)), c(static_cast<size_t>(n));
        for (auto& v : a) v = rng.uniform(-5.0, -0.02);
        for (auto& v : b) v = rng.uniform(-1.0, 1.0);
        for (auto& v : c) v = rng.uniform(-1.0, 1.0);
        const double delta = rng.uniform(1e-3, 1.0);
        std::vector<double> x(static_cast<size_t>(len));
        for (auto& v : x) v = rng.uniform(-1.0, 1.0);
        auto d = zoh_discretize(a, b, delta);
        auto y_rec = ssm_recurrence(d, c, x);
        auto y_conv = ssm_apply_conv(x, ssm_conv_kernel(d, c, len));
        worst = std::max(worst, testutil::max_abs_diff(y_rec, y_conv));
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("bounded state on long runs") {
    Rng rng(4);
    for (int trial = 0; trial < 4; ++trial) {
        std::vector<double> a{rng.uniform(-4.0, -0.05)};
        std::vector<double> b{rng.uniform(-1.5, 1.5)};
        const double delta = rng.uniform(0.01, 1.0);
        auto d = zoh_discretize(a, b, delta);
        const double bound = std::fabs(d.b_bar[0]) * 1.0 / (1.0 - std::fabs(d.a_bar[0]));
        double h = 0.0, hmax = 0.0;
        for (int64_t t = 0; t < 10000; ++t) {
            h = d.a_bar[0] * h + d.b_bar[0] * rng.uniform(-1.0, 1.0);
            hmax = std::max(hmax, std::fabs(h));
        }
        CHECK(hmax <= bound * (1.0 + 1e-12));
    }
}

TEST_CASE("batched recurrence matches the per-channel reference") {
    Rng rng(5);
    const int64_t batch = 2, len = 7, ch = 3, n = 4;
    Tensor x = random_tensor({batch, len, ch}, rng);
    Tensor a = random_tensor({ch, n}, rng, -3.0, -0.1);
    Tensor b = random_tensor({ch, n}, rng);
    Tensor c = random_tensor({ch, n}, rng);
    const double delta = 0.2;
    Tensor y = ssm_recurrence_batch(x, a, b, c, delta);
    for (int64_t d = 0; d < ch; ++d) {
        std::span<const double> ar(a.data().data() + d * n, static_cast<size_t>(n));
        std::span<const double> br(b.data().data() + d * n, static_cast<size_t>(n));
        std::span<const double> cr(c.data().data() + d * n, static_cast<size_t>(n));
        auto disc = zoh_discretize(ar, br, delta);
        for (int64_t bi = 0; bi < batch; ++bi) {
            std::vector<double> xs(static_cast<size_t>(len));
            for (int64_t t = 0; t < len; ++t) xs[static_cast<size_t>(t)] = x.at({bi, t, d});
            auto yr = ssm_recurrence(disc, cr, xs);
            for (int64_t t = 0; t < len; ++t)
                CHECK(y.at({bi, t, d}) == doctest::Approx(yr[static_cast<size_t>(t)]).epsilon(1e-14));
        }
    }
}

TEST_CASE("selective scan with zero projections is the skip path") {
    Rng rng(6);
    const int64_t ch = 4, n = 4;
    S6Weights w = make_s6_weights(ch, n, rng);
    for (Tensor t : {w.w_delta, w.w_b, w.b_b, w.w_c, w.b_c}) {
        for (double& v : t.data()) v = 0.0;
    }
    Tensor x = random_tensor({2, 5, ch}, rng);
    Tensor y = s6_selective_scan(x, w);
    // B_t = C_t = 0 kills the state path; d_skip is 1.
    CHECK(testutil::allclose(y.data(), x.data()));

    // And with the skip disabled the output is exactly zero.
    w.use_d_skip = false;
    Tensor y2 = s6_selective_scan(x, w);
    for (double v : y2.data()) CHECK(v == 0.0);
}

TEST_CASE("selective scan reduces to the time-invariant recurrence") {
    Rng rng(7);
    const int64_t batch = 2, len = 9, ch = 3, n = 4;
    S6Weights w = make_s6_weights(ch, n, rng);
    for (Tensor t : {w.w_delta, w.w_b, w.w_c}) {
        for (double& v : t.data()) v = 0.0;
    }
    const double delta = 0.13;
    for (double& v : w.b_delta.data()) v = std::log(std::expm1(delta));
    for (int64_t k = 0; k < n; ++k) {
        w.b_b.data()[static_cast<size_t>(k)] = 0.4 - 0.1 * static_cast<double>(k);
        w.b_c.data()[static_cast<size_t>(k)] = -0.2 + 0.15 * static_cast<double>(k);
    }
    Tensor x = random_tensor({batch, len, ch}, rng);
    Tensor y = s6_selective_scan(x, w);

    // Reference: per-channel ZOH recurrence with the constant projections,
    // plus the d_skip passthrough.
    Tensor a(Shape{ch, n}), b(Shape{ch, n}), c(Shape{ch, n});
    for (int64_t d = 0; d < ch; ++d)
        for (int64_t k = 0; k < n; ++k) {
            a.data()[static_cast<size_t>(d * n + k)] = -std::exp(w.a_log.at({d, k}));
            b.data()[static_cast<size_t>(d * n + k)] = w.b_b.at({k});
            c.data()[static_cast<size_t>(d * n + k)] = w.b_c.at({k});
        }
    Tensor y_ref = ssm_recurrence_batch(x, a, b, c, delta);
    double worst = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i)
        worst = std::max(worst, std::fabs(y.data()[static_cast<size_t>(i)] -
                                          (y_ref.data()[static_cast<size_t>(i)] + x.data()[static_cast<size_t>(i)])));
    CHECK(worst < 1e-12);
}

TEST_CASE("selective scan is causal") {
    Rng rng(8);
    const int64_t len = 10, ch = 3;
    S6Weights w = make_s6_weights(ch, 4, rng);
    Tensor x = random_tensor({1, len, ch}, rng);
    Tensor y = s6_selective_scan(x, w);
    Tensor x2 = x.clone();
    const int64_t cut = 6;
    for (int64_t t = cut; t < len; ++t)
        for (int64_t d = 0; d < ch; ++d)
            x2.data()[static_cast<size_t>((t * ch) + d)] += rng.uniform(0.5, 1.5);
    Tensor y2 = s6_selective_scan(x2, w);
    for (int64_t t = 0; t < cut; ++t)
        for (int64_t d = 0; d < ch; ++d) CHECK(y.at({0, t, d}) == y2.at({0, t, d}));
    // And the tail does change.
    double tail = 0.0;
    for (int64_t t = cut; t < len; ++t)
        for (int64_t d = 0; d < ch; ++d) tail += std::fabs(y.at({0, t, d}) - y2.at({0, t, d}));
    CHECK(tail > 1e-6);
}

TEST_CASE("selective scan is input-dependent (not time-invariant)") {
    Rng rng(9);
    const int64_t len = 8, ch = 2;
    S6Weights w = make_s6_weights(ch, 4, rng);
    Tensor x = random_tensor({1, len, ch}, rng);
    Tensor y = s6_selective_scan(x, w);

    std::vector<int64_t> perm(static_cast<size_t>(len));
    for (int64_t i = 0; i < len; ++i) perm[static_cast<size_t>(i)] = i;
    Rng shuffle_rng(10);
    shuffle_rng.shuffle(perm);

    Tensor xp(x.shape());
    for (int64_t t = 0; t < len; ++t)
        for (int64_t d = 0; d < ch; ++d)
            xp.data()[static_cast<size_t>(t * ch + d)] = x.at({0, perm[static_cast<size_t>(t)], d});
    Tensor yp = s6_selective_scan(xp, w);

    // Output of the permuted input differs from the permuted output.
    double diff = 0.0;
    for (int64_t t = 0; t < len; ++t)
        for (int64_t d = 0; d < ch; ++d)
            diff += std::fabs(yp.at({0, t, d}) - y.at({0, perm[static_cast<size_t>(t)], d}));
    CHECK(diff > 1e-3);
}

TEST_CASE("selective scan gradient check over all weights") {
    Rng rng(11);
    const int64_t batch = 2, len = 6, ch = 4, n = 4;
    S6Weights w = make_s6_weights(ch, n, rng);
    // Condition the check: at the tiny training-init delta some a_log
    // gradients sink below what central differences can resolve.
    for (double& v : w.b_delta.data()) v = std::log(std::expm1(rng.uniform(0.25, 0.75)));
    Tensor x = random_tensor({batch, len, ch}, rng, -1.0, 1.0);
    auto fn = [&] { return sum_all(s6_selective_scan(x, w)); };
    auto params = w.named_params("s6");
    params.emplace_back("x", x);
    auto report = finite_diff_check(fn, params, 1e-5, 1e-4);
    CHECK(report.all_pass());
    // A richer loss to exercise the scan path with non-uniform output grads.
    // The larger loss magnitude raises finite-difference roundoff, so the
    // step is widened accordingly.
    auto fn2 = [&] {
        Tensor y = s6_selective_scan(x, w);
        return sum_all(mul(y, y));
    };
    CHECK(finite_diff_check(fn2, params, 1e-4, 1e-4).all_pass());
}

TEST_CASE("scan benchmark reports equivalence and linear scaling") {
    auto result = run_scan_bench({256, 512, 1024, 2048}, 8, 5, 42);
    CHECK(result.rows.size() == 4);
    CHECK(result.max_equiv_err < 1e-10);
    for (const auto& row : result.rows) CHECK(row.recurrence_sec > 0.0);
}
