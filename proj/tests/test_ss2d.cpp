#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "dmamba/gradcheck.hpp"
#include "dmamba/ops.hpp"
#include "dmamba/ss2d.hpp"
#include "helpers.hpp"

using namespace dmamba;
using testutil::random_tensor;

namespace {

Tensor flip_both_axes(const Tensor& x) {
    const int64_t b_n = x.extent(0), h = x.extent(1), w = x.extent(2), ch = x.extent(3);
    Tensor out(x.shape());
    for (int64_t b = 0; b < b_n; ++b)
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j)
                for (int64_t c = 0; c < ch; ++c)
                    out.data()[static_cast<size_t>(((b * h + i) * w + j) * ch + c)] =
                        x.at({b, h - 1 - i, w - 1 - j, c});
    return out;
}

S6Weights pass_through_s6(int64_t channels, int64_t state) {
    Rng rng(99);
    S6Weights w = make_s6_weights(channels, state, rng);
    for (Tensor t : {w.w_delta, w.w_b, w.b_b, w.w_c, w.b_c}) {
        for (double& v : t.data()) v = 0.0;
    }
    return w;  // d_skip = 1 and dead state path: the identity map
}

}  // namespace

TEST_CASE("expand orders a 2x2 map along the four traversals") {
    // positions [[p,q],[r,s]] with one channel
    Tensor x = Tensor::from({1, 2, 2, 1}, {1.0, 2.0, 3.0, 4.0});  // p,q,r,s
    auto seqs = cross_scan_expand(x);
    CHECK(seqs[0].data() == std::vector<double>{1, 2, 3, 4});  // row-major
    CHECK(seqs[1].data() == std::vector<double>{4, 3, 2, 1});  // reversed
    CHECK(seqs[2].data() == std::vector<double>{1, 3, 2, 4});  // column-major
    CHECK(seqs[3].data() == std::vector<double>{4, 2, 3, 1});  // reversed
}

TEST_CASE("expand degenerate cases") {
    Rng rng(1);
    Tensor one = random_tensor({1, 1, 1, 3}, rng);
    auto seqs = cross_scan_expand(one);
    for (int d = 1; d < kScanDirections; ++d) CHECK(seqs[static_cast<size_t>(d)].data() == seqs[0].data());

    Tensor constant(Shape{1, 3, 4, 2}, 1.25);
    auto cs = cross_scan_expand(constant);
    for (const auto& s : cs)
        for (double v : s.data()) CHECK(v == 1.25);
}

TEST_CASE("each traversal is a bijection of positions") {
    for (auto [h, w] : {std::pair<int64_t, int64_t>{3, 5}, {1, 7}, {4, 1}, {2, 2}}) {
        for (int d = 0; d < kScanDirections; ++d) {
            std::vector<int> hits(static_cast<size_t>(h * w), 0);
            for (int64_t t = 0; t < h * w; ++t) hits[static_cast<size_t>(scan_source_index(d, t, h, w))]++;
            for (int v : hits) CHECK(v == 1);
        }
    }
}

TEST_CASE("merge of expand is 4x and is linear") {
    Rng rng(2);
    Tensor x = random_tensor({2, 3, 5, 2}, rng);
    auto seqs = cross_scan_expand(x);
    Tensor merged = cross_scan_merge(seqs, 3, 5);
    CHECK(merged.shape() == x.shape());
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(merged.data()[static_cast<size_t>(i)] == 4.0 * x.data()[static_cast<size_t>(i)]);  // exact

    // One direction zeroed -> 3x.
    auto seqs3 = seqs;
    seqs3[2] = Tensor(seqs[2].shape());
    Tensor merged3 = cross_scan_merge(seqs3, 3, 5);
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(merged3.data()[static_cast<size_t>(i)] == 3.0 * x.data()[static_cast<size_t>(i)]);

    // Linearity: merge(a + b) = merge(a) + merge(b).
    Tensor y = random_tensor({2, 3, 5, 2}, rng);
    auto sx = cross_scan_expand(x);
    auto sy = cross_scan_expand(y);
    std::array<Tensor, kScanDirections> ssum;
    for (int d = 0; d < kScanDirections; ++d) ssum[static_cast<size_t>(d)] = add(sx[static_cast<size_t>(d)], sy[static_cast<size_t>(d)]);
    Tensor lhs = cross_scan_merge(ssum, 3, 5);
    Tensor rhs = add(cross_scan_merge(sx, 3, 5), cross_scan_merge(sy, 3, 5));
    CHECK(testutil::allclose(lhs.data(), rhs.data(), 1e-14));

    CHECK_THROWS_AS(cross_scan_merge(seqs, 4, 5), ShapeError);
}

TEST_CASE("ss2d with pass-through scans returns 4x") {
    Rng rng(3);
    const int64_t ch = 4;
    SS2DWeights w = make_shared_ss2d_weights(pass_through_s6(ch, 4));
    Tensor x = random_tensor({2, 3, 4, ch}, rng);
    Tensor y = ss2d_forward(x, w);
    CHECK(y.shape() == x.shape());
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(y.data()[static_cast<size_t>(i)] == doctest::Approx(4.0 * x.data()[static_cast<size_t>(i)]).epsilon(1e-14));
}

TEST_CASE("on a single-row map paired directions coincide under shared weights") {
    Rng rng(4);
    const int64_t ch = 3;
    S6Weights shared = make_s6_weights(ch, 4, rng);
    SS2DWeights w = make_shared_ss2d_weights(shared);
    Tensor x = random_tensor({1, 1, 9, ch}, rng);  // 1 x L map
    auto outs = ss2d_direction_outputs(x, w);
    CHECK(outs[0].data() == outs[2].data());  // row-major == column-major on 1 row
    CHECK(outs[1].data() == outs[3].data());
}

TEST_CASE("reversed directions equal forward directions on the flipped map") {
    Rng rng(5);
    const int64_t ch = 2;
    S6Weights shared = make_s6_weights(ch, 4, rng);
    SS2DWeights w = make_shared_ss2d_weights(shared);
    Tensor x = random_tensor({1, 3, 4, ch}, rng);
    Tensor xf = flip_both_axes(x);
    auto out_x = ss2d_direction_outputs(x, w);
    auto out_xf = ss2d_direction_outputs(xf, w);
    // Scanning x backwards is scanning the flipped map forwards: identical
    // sequences in, identical sequences out (bitwise).
    CHECK(out_x[1].data() == out_xf[0].data());
    CHECK(out_x[3].data() == out_xf[2].data());
}

TEST_CASE("per-direction causality in scan order") {
    Rng rng(6);
    const int64_t h = 3, w = 4, ch = 2;
    S6Weights shared = make_s6_weights(ch, 4, rng);
    SS2DWeights weights = make_shared_ss2d_weights(shared);
    Tensor x = random_tensor({1, h, w, ch}, rng);
    auto base = ss2d_direction_outputs(x, weights);

    const int64_t t0 = 7;  // perturb the position visited at scan step t0
    for (int d = 0; d < kScanDirections; ++d) {
        Tensor xp = x.clone();
        const int64_t pos = scan_source_index(d, t0, h, w);
        for (int64_t c = 0; c < ch; ++c) xp.data()[static_cast<size_t>(pos * ch + c)] += 1.0;
        auto pert = ss2d_direction_outputs(xp, weights);
        for (int64_t t = 0; t < t0; ++t)
            for (int64_t c = 0; c < ch; ++c)
                CHECK(pert[static_cast<size_t>(d)].at({0, t, c}) == base[static_cast<size_t>(d)].at({0, t, c}));
    }
}

TEST_CASE("ss2d preserves shape for assorted maps") {
    Rng rng(7);
    for (auto [h, w] : {std::pair<int64_t, int64_t>{1, 1}, {5, 50}, {2, 3}}) {
        SS2DWeights weights = make_ss2d_weights(2, 4, rng);
        Tensor x = random_tensor({1, h, w, 2}, rng);
        CHECK(ss2d_forward(x, weights).shape() == x.shape());
    }
}

TEST_CASE("ss2d gradient check on a 2x3x4 map") {
    Rng rng(8);
    const int64_t ch = 4;
    SS2DWeights w = make_ss2d_weights(ch, 4, rng);
    // The default init places delta near 1e-3..1e-1, where some a_log
    // gradients are too small for finite differences to resolve; move the
    // check to a well-conditioned point.
    for (auto& dir : w.direction)
        for (double& v : dir.b_delta.data()) v = std::log(std::expm1(rng.uniform(0.25, 0.75)));
    Tensor x = random_tensor({1, 2, 3, ch}, rng, -1.0, 1.0);
    auto fn = [&] { return sum_all(ss2d_forward(x, w)); };
    auto params = w.named_params("ss2d");
    params.emplace_back("x", x);
    auto report = finite_diff_check(fn, params, 1e-5, 1e-4);
    CHECK(report.all_pass());
}
