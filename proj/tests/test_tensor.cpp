#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "dmamba/gradcheck.hpp"
#include "dmamba/ops.hpp"
#include "dmamba/rng.hpp"
#include "dmamba/tensor.hpp"
#include "helpers.hpp"

using namespace dmamba;
using testutil::random_tensor;

TEST_CASE("tensor basics and invariants") {
    Tensor t(Shape{2, 3}, 1.5);
    CHECK(t.numel() == 6);
    CHECK(t.shape() == Shape{2, 3});
    CHECK(t.at({1, 2}) == 1.5);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
    CHECK_THROWS_AS(t.item(), ShapeError);

    Tensor s = Tensor::scalar(4.0);
    CHECK(s.item() == 4.0);

    Tensor g(Shape{3}, 0.0, true);
    CHECK(g.requires_grad());
    CHECK(g.grad().size() == 3);
}

TEST_CASE("matmul identity and zero cases") {
    Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(1);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor prod = matmul(eye, a);
    CHECK(testutil::allclose(prod.data(), a.data()));

    Tensor zero(Shape{4, 2});
    Tensor z = matmul(a, zero);
    for (double v : z.data()) CHECK(v == 0.0);

    CHECK_THROWS_AS(matmul(a, Tensor(Shape{3, 2})), ShapeError);
    CHECK_THROWS_WITH_AS(matmul(a, Tensor(Shape{3, 2})),
                         doctest::Contains("[3, 4]"), ShapeError);
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(7);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    auto fn = [&] { return sum_all(matmul(a, b)); };
    auto report = finite_diff_check(fn, {{"a", a}, {"b", b}}, 1e-5, 1e-6);
    CHECK(report.all_pass());
}

TEST_CASE("elementwise analytic values") {
    Tensor x = Tensor::from({4}, {0.0, -2.5, 2.5, 0.0});
    CHECK(silu(x).at({0}) == 0.0);
    CHECK(relu(x).at({1}) == 0.0);
    CHECK(relu(x).at({2}) == 2.5);
    CHECK(softplus(x).at({3}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // Overflow-safe softplus at extreme inputs.
    Tensor big = Tensor::from({2}, {700.0, -700.0});
    Tensor sp = softplus(big);
    CHECK(sp.at({0}) == doctest::Approx(700.0));
    CHECK(sp.at({1}) == doctest::Approx(0.0).epsilon(1e-12));

    CHECK_THROWS_AS(add(x, Tensor(Shape{3})), ShapeError);
}

TEST_CASE("non-finite inputs raise in debug mode") {
    Tensor bad = Tensor::from({2}, {1.0, std::nan("")});
    Tensor ok = Tensor::from({2}, {1.0, 2.0});
    CHECK_NOTHROW(add(bad, ok));  // default: silent propagation
    set_debug_checks(true);
    CHECK_THROWS_AS(add(bad, ok), NumericalError);
    CHECK_THROWS_AS(mul(ok, bad), NumericalError);
    set_debug_checks(false);
}

TEST_CASE("reduce values and gradient") {
    Tensor x = Tensor::from({3}, {1, 2, 3});
    CHECK(sum_all(x).item() == 6.0);

    Tensor c(Shape{2, 5}, 3.25);
    CHECK(mean_all(c).item() == doctest::Approx(3.25).epsilon(1e-15));

    Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor row_sums = reduce(Reduce::sum, m, {1});
    CHECK(row_sums.shape() == Shape{2});
    CHECK(row_sums.at({0}) == 3.0);
    CHECK(row_sums.at({1}) == 7.0);
    CHECK_THROWS_AS(reduce(Reduce::sum, m, {2}), ShapeError);

    // grad of sum(x^2) is 2x.
    Rng rng(3);
    Tensor v = random_tensor({5}, rng, -2.0, 2.0, true);
    {
        Tape tape;
        Tensor loss = sum_all(mul(v, v));
        tape.backward(loss);
    }
    for (size_t i = 0; i < 5; ++i)
        CHECK(v.grad()[i] == doctest::Approx(2.0 * v.data()[i]).epsilon(1e-12));

    auto fn = [&] { return sum_all(mul(v, v)); };
    CHECK(finite_diff_check(fn, {{"v", v}}).all_pass());
}

TEST_CASE("backward populates reachable grads and accumulates") {
    Tensor w = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    Tensor x = Tensor::from({2, 1}, {5, 6});
    {
        Tape tape;
        Tensor loss = sum_all(matmul(w, x));
        tape.backward(loss);
    }
    // d sum(Wx) / dW broadcasts x across rows.
    CHECK(w.grad() == std::vector<double>{5, 6, 5, 6});

    // Unused parameter keeps a zero gradient.
    Tensor unused(Shape{3}, 1.0, true);
    CHECK(unused.grad() == std::vector<double>{0, 0, 0});

    // Repeated backward without reset accumulates.
    w.zero_grad();
    {
        Tape tape;
        Tensor loss = sum_all(matmul(w, x));
        tape.backward(loss);
        tape.backward(loss);
    }
    CHECK(w.grad() == std::vector<double>{10, 12, 10, 12});

    Tape empty_tape;
    CHECK_THROWS_AS(empty_tape.backward(Tensor::scalar(0.0, true)), ValueError);
    {
        Tape tape;
        Tensor nonscalar = add(w, w);
        CHECK_THROWS_AS(tape.backward(nonscalar), ShapeError);
    }
}

TEST_CASE("reverse sweep applies each rule exactly once") {
    Rng rng(11);
    Tensor a = random_tensor({4}, rng, -1.0, 1.0, true);
    Tape tape;
    Tensor y = add(mul(a, a), neg(a));  // 3 ops
    Tensor loss = sum_all(y);           // 4th
    CHECK(tape.size() == 4);
    CHECK(tape.backward(loss) == 4);
}

TEST_CASE("gradient linearity over random tensors") {
    Rng rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor x = random_tensor({6}, rng, -2.0, 2.0, true);
        const double a = rng.uniform(-3.0, 3.0);
        const double b = rng.uniform(-3.0, 3.0);

        auto grad_of = [&](auto&& make_loss) {
            x.zero_grad();
            Tape tape;
            Tensor loss = make_loss();
            tape.backward(loss);
            return x.grad();
        };
        auto gf = grad_of([&] { return sum_all(silu(x)); });
        auto gg = grad_of([&] { return sum_all(mul(x, x)); });
        auto gsum = grad_of([&] {
            return add(scale(sum_all(silu(x)), a), scale(sum_all(mul(x, x)), b));
        });
        for (size_t i = 0; i < 6; ++i)
            CHECK(gsum[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-10));
    }
}

TEST_CASE("forward outputs finite for inputs in [-10, 10]") {
    Rng rng(23);
    set_debug_checks(true);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor({4, 4}, rng, -10.0, 10.0);
        Tensor y = random_tensor({4, 4}, rng, -10.0, 10.0);
        CHECK_NOTHROW(matmul(x, y));
        CHECK_NOTHROW(exp(x));
        CHECK_NOTHROW(softplus(x));
        CHECK_NOTHROW(silu(x));
        CHECK_NOTHROW(relu(neg(x)));
        CHECK_NOTHROW(mean_all(mul(x, y)));
    }
    set_debug_checks(false);
}

TEST_CASE("finite_diff_check on a quadratic is exact to roundoff") {
    Rng rng(29);
    Tensor p = random_tensor({4}, rng, 0.5, 1.5, true);
    auto fn = [&] { return sum_all(mul(p, p)); };
    auto report = finite_diff_check(fn, {{"p", p}}, 1e-5, 1e-8);
    CHECK(report.all_pass());
    CHECK(report.worst() < 1e-8);
}

TEST_CASE("finite_diff_check passes a silu chain at 1e-6") {
    Rng rng(31);
    Tensor p = random_tensor({3, 3}, rng, 0.3, 1.0, true);
    Tensor x = random_tensor({3, 3}, rng, 0.3, 1.0);
    auto fn = [&] { return sum_all(silu(mul(p, add(x, silu(p))))); };
    auto report = finite_diff_check(fn, {{"p", p}}, 1e-5, 1e-6);
    CHECK(report.all_pass());
}

TEST_CASE("finite_diff_check flags a corrupted gradient rule") {
    Tensor p = Tensor::from({2}, {1.0, 2.0}, true);
    auto fn = [&] {
        Tensor out(Shape{1});
        out.data()[0] = p.data()[0] * p.data()[0] + p.data()[1];
        if (Tape::active()) {
            out.set_requires_grad(true);
            Tape::active()->record({out}, [p, out] {
                // Deliberately wrong rule: ignores the square.
                p.grad()[0] += out.grad()[0];
                p.grad()[1] += out.grad()[0];
            });
        }
        return out;
    };
    auto report = finite_diff_check(fn, {{"p", p}}, 1e-5, 1e-4);
    CHECK_FALSE(report.all_pass());
    CHECK_FALSE(report.entries[0].pass);
}
