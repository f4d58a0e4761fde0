#include "dmamba/ops.hpp"

#include <algorithm>
#include <cmath>

namespace dmamba {

using detail::accumulate;
using detail::check_finite;
using detail::tracked;

double sigmoid_scalar(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_scalar(double x) {
    // ln(1 + e^x) without overflow: for large x the additive term vanishes.
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
    }
}

void check_finite_input(const Tensor& x, const char* op) {
    if (!debug_checks()) return;
    for (double v : x.data()) {
        if (!std::isfinite(v)) throw NumericalError(std::string(op) + ": non-finite input");
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
    }
    const int64_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor out(Shape{m, n});
    const auto& ad = a.data();
    const auto& bd = b.data();
    auto& od = out.data();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) {
            const double av = ad[static_cast<size_t>(i * k + p)];
            if (av == 0.0) continue;
            const size_t brow = static_cast<size_t>(p * n);
            const size_t orow = static_cast<size_t>(i * n);
            for (int64_t j = 0; j < n; ++j) od[orow + j] += av * bd[brow + j];
        }
    }
    check_finite(out, "matmul");
    if (tracked({&a, &b})) {
        out.set_requires_grad(true);
        Tape::active()->record({out}, [a, b, out, m, k, n] {
            const auto& go = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                const auto& bd2 = b.data();
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (int64_t j = 0; j < n; ++j)
                            acc += go[static_cast<size_t>(i * n + j)] * bd2[static_cast<size_t>(p * n + j)];
                        ga[static_cast<size_t>(i * k + p)] += acc;
                    }
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                const auto& ad2 = a.data();
                for (int64_t p = 0; p < k; ++p)
                    for (int64_t j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (int64_t i = 0; i < m; ++i)
                            acc += ad2[static_cast<size_t>(i * k + p)] * go[static_cast<size_t>(i * n + j)];
                        gb[static_cast<size_t>(p * n + j)] += acc;
                    }
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    check_finite_input(a, "add");
    check_finite_input(b, "add");
    Tensor out(a.shape());
    auto& od = out.data();
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
    check_finite(out, "add");
    if (tracked({&a, &b})) {
        out.set_requires_grad(true);
        Tape::active()->record({out}, [a, b, out] {
            const auto& go = out.grad();
            if (a.requires_grad()) accumulate(a, go);
            if (b.requires_grad()) accumulate(b, go);
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    check_finite_input(a, "mul");
    check_finite_input(b, "mul");
    Tensor out(a.shape());
    auto& od = out.data();
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
    check_finite(out, "mul");
    if (tracked({&a, &b})) {
        out.set_requires_grad(true);
        Tape::active()->record({out}, [a, b, out] {
            const auto& go = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                const auto& bd2 = b.data();
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bd2[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                const auto& ad2 = a.data();
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * ad2[i];
            }
        });
    }
    return out;
}

namespace {

// Shared scaffolding for unary pointwise ops: fn fills out, dfn produces the
// local derivative from (x, y).
template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Bwd local_derivative) {
    check_finite_input(x, name);
    Tensor out(x.shape());
    auto& od = out.data();
    const auto& xd = x.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = fwd(xd[i]);
    check_finite(out, name);
    if (tracked({&x})) {
        out.set_requires_grad(true);
        Tape::active()->record({out}, [x, out, local_derivative] {
            const auto& go = out.grad();
            const auto& xd2 = x.data();
            const auto& od2 = out.data();
            auto& gx = x.grad();
            for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * local_derivative(xd2[i], od2[i]);
        });
    }
    return out;
}

}  // namespace

Tensor relu(const Tensor& x) {
    return unary_op(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& x) {
    return unary_op(
        x, "silu", [](double v) { return v * sigmoid_scalar(v); },
        [](double v, double) {
            const double s = sigmoid_scalar(v);
            return s * (1.0 + v * (1.0 - s));
        });
}

Tensor softplus(const Tensor& x) {
    return unary_op(
        x, "softplus", [](double v) { return softplus_scalar(v); },
        [](double v, double) { return sigmoid_scalar(v); });
}

Tensor exp(const Tensor& x) {
    return unary_op(
        x, "exp", [](double v) { return std::exp(v); },
        [](double, double y) { return y; });
}

Tensor neg(const Tensor& x) {
    return unary_op(
        x, "neg", [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
    return unary_op(
        x, "scale", [factor](double v) { return factor * v; },
        [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
    return unary_op(
        x, "add_scalar", [value](double v) { return v + value; },
        [](double, double) { return 1.0; });
}

Tensor reduce(Reduce kind, const Tensor& x, const std::vector<int64_t>& axes) {
    const int64_t r = x.rank();
    std::vector<bool> reduced(static_cast<size_t>(r), false);
    for (int64_t a : axes) {
        int64_t ax = a < 0 ? a + r : a;
        if (ax < 0 || ax >= r) {
            throw ShapeError("reduce: axis " + std::to_string(a) + " invalid for " +
                             shape_to_string(x.shape()));
        }
        reduced[static_cast<size_t>(ax)] = true;
    }
    Shape out_shape;
    for (int64_t i = 0; i < r; ++i)
        if (!reduced[static_cast<size_t>(i)]) out_shape.push_back(x.shape()[static_cast<size_t>(i)]);
    if (out_shape.empty()) out_shape.push_back(1);

    // Map each input flat index to its output flat index once.
    const auto& xs = x.shape();
    int64_t count = 1;
    for (int64_t i = 0; i < r; ++i)
        if (reduced[static_cast<size_t>(i)]) count *= xs[static_cast<size_t>(i)];

    Tensor out(out_shape);
    auto& od = out.data();
    const auto& xd = x.data();
    const int64_t n = x.numel();
    std::vector<int64_t> out_stride(static_cast<size_t>(r), 0);
    {
        int64_t stride = 1;
        for (int64_t i = r - 1; i >= 0; --i) {
            if (!reduced[static_cast<size_t>(i)]) {
                out_stride[static_cast<size_t>(i)] = stride;
                stride *= xs[static_cast<size_t>(i)];
            }
        }
    }
    std::vector<int64_t> index_map(static_cast<size_t>(n));
    {
        std::vector<int64_t> idx(static_cast<size_t>(r), 0);
        for (int64_t flat = 0; flat < n; ++flat) {
            int64_t o = 0;
            for (int64_t i = 0; i < r; ++i) o += idx[static_cast<size_t>(i)] * out_stride[static_cast<size_t>(i)];
            index_map[static_cast<size_t>(flat)] = o;
            for (int64_t i = r - 1; i >= 0; --i) {
                if (++idx[static_cast<size_t>(i)] < xs[static_cast<size_t>(i)]) break;
                idx[static_cast<size_t>(i)] = 0;
            }
        }
    }
    for (int64_t flat = 0; flat < n; ++flat)
        od[static_cast<size_t>(index_map[static_cast<size_t>(flat)])] += xd[static_cast<size_t>(flat)];
    const double denom = kind == Reduce::mean ? static_cast<double>(count) : 1.0;
    if (kind == Reduce::mean)
        for (double& v : od) v /= denom;
    check_finite(out, "reduce");

    if (tracked({&x})) {
        out.set_requires_grad(true);
        Tape::active()->record({out}, [x, out, index_map = std::move(index_map), denom] {
            const auto& go = out.grad();
            auto& gx = x.grad();
            for (size_t flat = 0; flat < gx.size(); ++flat)
                gx[flat] += go[static_cast<size_t>(index_map[flat])] / denom;
        });
    }
    return out;
}

Tensor sum_all(const Tensor& x) {
    std::vector<int64_t> axes(static_cast<size_t>(x.rank()));
    for (int64_t i = 0; i < x.rank(); ++i) axes[static_cast<size_t>(i)] = i;
    return reduce(Reduce::sum, x, axes);
}

Tensor mean_all(const Tensor& x) {
    std::vector<int64_t> axes(static_cast<size_t>(x.rank()));
    for (int64_t i = 0; i < x.rank(); ++i) axes[static_cast<size_t>(i)] = i;
    return reduce(Reduce::mean, x, axes);
}

}  // namespace dmamba
