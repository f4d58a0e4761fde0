#include "dmamba/nn_ops.hpp"

#include <cmath>

namespace dmamba {

using detail::check_finite;
using detail::tracked;

namespace {

void require_rank(const Tensor& x, int64_t rank, const char* op) {
    if (x.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_to_string(x.shape()));
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Conv2DParams& p) {
    require_rank(x, 4, "conv2d");
    require_rank(p.kernel, 4, "conv2d kernel");
    const int64_t batch = x.extent(0), in_ch = x.extent(1), in_h = x.extent(2), in_w = x.extent(3);
    const int64_t out_ch = p.kernel.extent(0), k_in = p.kernel.extent(1);
    const int64_t kh = p.kernel.extent(2), kw = p.kernel.extent(3);
    const int64_t g = p.groups;
    if (g < 1 || in_ch % g != 0 || out_ch % g != 0 || k_in != in_ch / g) {
        throw ShapeError("conv2d: channel/group mismatch: input " + shape_to_string(x.shape()) +
                         ", kernel " + shape_to_string(p.kernel.shape()) + ", groups " +
                         std::to_string(g));
    }
    if (p.bias.defined() && (p.bias.rank() != 1 || p.bias.extent(0) != out_ch)) {
        throw ShapeError("conv2d: bias extent mismatch");
    }
    const int64_t s = p.stride, pad = p.padding;
    const int64_t out_h = (in_h + 2 * pad - kh) / s + 1;
    const int64_t out_w = (in_w + 2 * pad - kw) / s + 1;
    if (out_h <= 0 || out_w <= 0) throw ShapeError("conv2d: kernel larger than padded input");

    Tensor out(Shape{batch, out_ch, out_h, out_w});
    const auto& xd = x.data();
    const auto& wd = p.kernel.data();
    auto& od = out.data();
    const int64_t cpg_in = in_ch / g, cpg_out = out_ch / g;

    if (s == 1) {
        // Shift-and-accumulate: for each kernel tap, one contiguous
        // row-segment multiply-add. Keeps the inner loop branch-free.
        for (int64_t b = 0; b < batch; ++b) {
            for (int64_t co = 0; co < out_ch; ++co) {
                const int64_t gi = co / cpg_out;
                const double bias = p.bias.defined() ? p.bias.data()[static_cast<size_t>(co)] : 0.0;
                double* out_plane = od.data() + (b * out_ch + co) * out_h * out_w;
                for (int64_t i = 0; i < out_h * out_w; ++i) out_plane[i] = bias;
                for (int64_t cl = 0; cl < cpg_in; ++cl) {
                    const int64_t ci = gi * cpg_in + cl;
                    const double* in_plane = xd.data() + (b * in_ch + ci) * in_h * in_w;
                    for (int64_t r = 0; r < kh; ++r) {
                        const int64_t oh_lo = std::max<int64_t>(0, pad - r);
                        const int64_t oh_hi = std::min(out_h, in_h + pad - r);
                        for (int64_t c = 0; c < kw; ++c) {
                            const double wv = wd[static_cast<size_t>(((co * cpg_in + cl) * kh + r) * kw + c)];
                            if (wv == 0.0) continue;
                            const int64_t ow_lo = std::max<int64_t>(0, pad - c);
                            const int64_t ow_hi = std::min(out_w, in_w + pad - c);
                            const int64_t shift = c - pad;
                            for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                                double* orow = out_plane + oh * out_w;
                                const double* xrow = in_plane + (oh - pad + r) * in_w;
                                for (int64_t ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * xrow[ow + shift];
                            }
                        }
                    }
                }
            }
        }
    } else {
        for (int64_t b = 0; b < batch; ++b) {
            for (int64_t co = 0; co < out_ch; ++co) {
                const int64_t gi = co / cpg_out;
                const double bias = p.bias.defined() ? p.bias.data()[static_cast<size_t>(co)] : 0.0;
                for (int64_t oh = 0; oh < out_h; ++oh) {
                    for (int64_t ow = 0; ow < out_w; ++ow) {
                        double acc = bias;
                        for (int64_t cl = 0; cl < cpg_in; ++cl) {
                            const int64_t ci = gi * cpg_in + cl;
                            for (int64_t r = 0; r < kh; ++r) {
                                const int64_t ih = oh * s - pad + r;
                                if (ih < 0 || ih >= in_h) continue;
                                for (int64_t c = 0; c < kw; ++c) {
                                    const int64_t iw = ow * s - pad + c;
                                    if (iw < 0 || iw >= in_w) continue;
                                    acc += xd[static_cast<size_t>(((b * in_ch + ci) * in_h + ih) * in_w + iw)] *
                                           wd[static_cast<size_t>(((co * cpg_in + cl) * kh + r) * kw + c)];
                                }
                            }
                        }
                        od[static_cast<size_t>(((b * out_ch + co) * out_h + oh) * out_w + ow)] = acc;
                    }
                }
            }
        }
    }
    check_finite(out, "conv2d");

    if (tracked({&x, &p.kernel, &p.bias})) {
        out.set_requires_grad(true);
        Tensor kernel = p.kernel, bias = p.bias;
        Tape::active()->record({out}, [x, kernel, bias, out, batch, in_ch, in_h, in_w, out_ch,
                                       out_h, out_w, kh, kw, s, pad, g, cpg_in, cpg_out] {
            const auto& go = out.grad();
            const auto& xd2 = x.data();
            const auto& wd2 = kernel.data();
            const bool need_x = x.requires_grad();
            const bool need_w = kernel.requires_grad();
            const bool need_b = bias.defined() && bias.requires_grad();
            if (need_b) {
                auto& gb = bias.grad();
                for (int64_t b = 0; b < batch; ++b)
                    for (int64_t co = 0; co < out_ch; ++co) {
                        const double* gy_plane = go.data() + (b * out_ch + co) * out_h * out_w;
                        double acc = 0.0;
                        for (int64_t i = 0; i < out_h * out_w; ++i) acc += gy_plane[i];
                        gb[static_cast<size_t>(co)] += acc;
                    }
            }
            if (s == 1) {
                // Per-tap row segments, mirroring the forward fast path.
                for (int64_t b = 0; b < batch; ++b) {
                    for (int64_t co = 0; co < out_ch; ++co) {
                        const int64_t gi = co / cpg_out;
                        const double* gy_plane = go.data() + (b * out_ch + co) * out_h * out_w;
                        for (int64_t cl = 0; cl < cpg_in; ++cl) {
                            const int64_t ci = gi * cpg_in + cl;
                            const double* in_plane = xd2.data() + (b * in_ch + ci) * in_h * in_w;
                            double* gx_plane =
                                need_x ? x.grad().data() + (b * in_ch + ci) * in_h * in_w : nullptr;
                            for (int64_t r = 0; r < kh; ++r) {
                                const int64_t oh_lo = std::max<int64_t>(0, pad - r);
                                const int64_t oh_hi = std::min(out_h, in_h + pad - r);
                                for (int64_t c = 0; c < kw; ++c) {
                                    const int64_t ow_lo = std::max<int64_t>(0, pad - c);
                                    const int64_t ow_hi = std::min(out_w, in_w + pad - c);
                                    const int64_t shift = c - pad;
                                    const size_t wi = static_cast<size_t>(
                                        ((co * cpg_in + cl) * kh + r) * kw + c);
                                    const double wv = wd2[wi];
                                    double wacc = 0.0;
                                    for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                                        const double* gyrow = gy_plane + oh * out_w;
                                        const int64_t row = (oh - pad + r) * in_w;
                                        if (need_x) {
                                            double* gxrow = gx_plane + row;
                                            for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                                                gxrow[ow + shift] += wv * gyrow[ow];
                                        }
                                        if (need_w) {
                                            const double* xrow = in_plane + row;
                                            for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                                                wacc += gyrow[ow] * xrow[ow + shift];
                                        }
                                    }
                                    if (need_w) kernel.grad()[wi] += wacc;
                                }
                            }
                        }
                    }
                }
            } else {
                for (int64_t b = 0; b < batch; ++b) {
                    for (int64_t co = 0; co < out_ch; ++co) {
                        const int64_t gi = co / cpg_out;
                        for (int64_t oh = 0; oh < out_h; ++oh) {
                            for (int64_t ow = 0; ow < out_w; ++ow) {
                                const double gy =
                                    go[static_cast<size_t>(((b * out_ch + co) * out_h + oh) * out_w + ow)];
                                if (gy == 0.0) continue;
                                for (int64_t cl = 0; cl < cpg_in; ++cl) {
                                    const int64_t ci = gi * cpg_in + cl;
                                    for (int64_t r = 0; r < kh; ++r) {
                                        const int64_t ih = oh * s - pad + r;
                                        if (ih < 0 || ih >= in_h) continue;
                                        for (int64_t c = 0; c < kw; ++c) {
                                            const int64_t iw = ow * s - pad + c;
                                            if (iw < 0 || iw >= in_w) continue;
                                            const size_t xi = static_cast<size_t>(
                                                ((b * in_ch + ci) * in_h + ih) * in_w + iw);
                                            const size_t wi = static_cast<size_t>(
                                                ((co * cpg_in + cl) * kh + r) * kw + c);
                                            if (need_x) x.grad()[xi] += gy * wd2[wi];
                                            if (need_w) kernel.grad()[wi] += gy * xd2[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor batchnorm2d(const Tensor& x, NormParams& p, NormMode mode) {
    require_rank(x, 4, "batchnorm2d");
    const int64_t batch = x.extent(0), ch = x.extent(1), h = x.extent(2), w = x.extent(3);
    if (p.gamma.extent(0) != ch || p.beta.extent(0) != ch) {
        throw ShapeError("batchnorm2d: affine extent mismatch with " + std::to_string(ch) +
                         " channels");
    }
    if (mode == NormMode::train && batch < 2) {
        throw ValueError("batchnorm2d: train mode requires batch >= 2, got " +
                         std::to_string(batch));
    }
    const int64_t m = batch * h * w;  // elements per channel
    const double inv_m = 1.0 / static_cast<double>(m);
    const auto& xd = x.data();

    std::vector<double> mean(static_cast<size_t>(ch), 0.0), var(static_cast<size_t>(ch), 0.0);
    if (mode == NormMode::train) {
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t c = 0; c < ch; ++c) {
                const size_t base = static_cast<size_t>((b * ch + c) * h * w);
                double acc = 0.0;
                for (int64_t i = 0; i < h * w; ++i) acc += xd[base + static_cast<size_t>(i)];
                mean[static_cast<size_t>(c)] += acc;
            }
        for (double& v : mean) v *= inv_m;
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t c = 0; c < ch; ++c) {
                const size_t base = static_cast<size_t>((b * ch + c) * h * w);
                const double mu = mean[static_cast<size_t>(c)];
                double acc = 0.0;
                for (int64_t i = 0; i < h * w; ++i) {
                    const double d = xd[base + static_cast<size_t>(i)] - mu;
                    acc += d * d;
                }
                var[static_cast<size_t>(c)] += acc;
            }
        for (double& v : var) v *= inv_m;
        // Running stats track the unbiased variance.
        auto& rm = p.running_mean.data();
        auto& rv = p.running_var.data();
        const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
        for (int64_t c = 0; c < ch; ++c) {
            rm[static_cast<size_t>(c)] =
                (1.0 - p.momentum) * rm[static_cast<size_t>(c)] + p.momentum * mean[static_cast<size_t>(c)];
            rv[static_cast<size_t>(c)] = (1.0 - p.momentum) * rv[static_cast<size_t>(c)] +
                                         p.momentum * var[static_cast<size_t>(c)] * unbias;
        }
    } else {
        mean = p.running_mean.data();
        var = p.running_var.data();
    }

    std::vector<double> inv_std(static_cast<size_t>(ch));
    for (int64_t c = 0; c < ch; ++c)
        inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + p.eps);

    Tensor out(x.shape());
    auto& od = out.data();
    const auto& gd = p.gamma.data();
    const auto& bd = p.beta.data();
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t c = 0; c < ch; ++c) {
            const size_t base = static_cast<size_t>((b * ch + c) * h * w);
            const double mu = mean[static_cast<size_t>(c)];
            const double is = inv_std[static_cast<size_t>(c)];
            const double gamma = gd[static_cast<size_t>(c)];
            const double beta = bd[static_cast<size_t>(c)];
            for (int64_t i = 0; i < h * w; ++i)
                od[base + static_cast<size_t>(i)] = (xd[base + static_cast<size_t>(i)] - mu) * is * gamma + beta;
        }
    check_finite(out, "batchnorm2d");

    if (tracked({&x, &p.gamma, &p.beta})) {
        out.set_requires_grad(true);
        Tensor gamma = p.gamma, beta = p.beta;
        const bool train = mode == NormMode::train;
        Tape::active()->record({out}, [x, gamma, beta, out, mean, inv_std, batch, ch, h, w, inv_m,
                                       train] {
            const auto& go = out.grad();
            const auto& xd2 = x.data();
            const auto& gd2 = gamma.data();
            for (int64_t c = 0; c < ch; ++c) {
                const double mu = mean[static_cast<size_t>(c)];
                const double is = inv_std[static_cast<size_t>(c)];
                const double gm = gd2[static_cast<size_t>(c)];
                double sum_gy = 0.0, sum_gy_xhat = 0.0;
                for (int64_t b = 0; b < batch; ++b) {
                    const size_t base = static_cast<size_t>((b * ch + c) * h * w);
                    for (int64_t i = 0; i < h * w; ++i) {
                        const double gy = go[base + static_cast<size_t>(i)];
                        sum_gy += gy;
                        sum_gy_xhat += gy * (xd2[base + static_cast<size_t>(i)] - mu) * is;
                    }
                }
                if (gamma.requires_grad()) gamma.grad()[static_cast<size_t>(c)] += sum_gy_xhat;
                if (beta.requires_grad()) beta.grad()[static_cast<size_t>(c)] += sum_gy;
                if (x.requires_grad()) {
                    auto& gx = x.grad();
                    const double mean_gy = sum_gy * inv_m;
                    const double mean_gy_xhat = sum_gy_xhat * inv_m;
                    for (int64_t b = 0; b < batch; ++b) {
                        const size_t base = static_cast<size_t>((b * ch + c) * h * w);
                        for (int64_t i = 0; i < h * w; ++i) {
                            const double gy = go[base + static_cast<size_t>(i)];
                            const double xhat = (xd2[base + static_cast<size_t>(i)] - mu) * is;
                            if (train) {
                                gx[base + static_cast<size_t>(i)] +=
                                    gm * is * (gy - mean_gy - xhat * mean_gy_xhat);
                            } else {
                                gx[base + static_cast<size_t>(i)] += gm * is * gy;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor layernorm(const Tensor& x, const NormParams& p) {
    if (x.rank() < 1) throw ShapeError("layernorm: rank must be >= 1");
    const int64_t ch = x.extent(-1);
    if (p.gamma.extent(0) != ch || p.beta.extent(0) != ch) {
        throw ShapeError("layernorm: affine extent mismatch with " + std::to_string(ch) +
                         " channels");
    }
    const int64_t rows = x.numel() / ch;
    const double inv_c = 1.0 / static_cast<double>(ch);
    const auto& xd = x.data();
    const auto& gd = p.gamma.data();
    const auto& bd = p.beta.data();

    Tensor out(x.shape());
    auto& od = out.data();
    std::vector<double> mean(static_cast<size_t>(rows)), inv_std(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const size_t base = static_cast<size_t>(r * ch);
        double mu = 0.0;
        for (int64_t c = 0; c < ch; ++c) mu += xd[base + static_cast<size_t>(c)];
        mu *= inv_c;
        double v = 0.0;
        for (int64_t c = 0; c < ch; ++c) {
            const double d = xd[base + static_cast<size_t>(c)] - mu;
            v += d * d;
        }
        v *= inv_c;
        const double is = 1.0 / std::sqrt(v + p.eps);
        mean[static_cast<size_t>(r)] = mu;
        inv_std[static_cast<size_t>(r)] = is;
        for (int64_t c = 0; c < ch; ++c)
            od[base + static_cast<size_t>(c)] =
                (xd[base + static_cast<size_t>(c)] - mu) * is * gd[static_cast<size_t>(c)] + bd[static_cast<size_t>(c)];
    }
    check_finite(out, "layernorm");

    if (tracked({&x, &p.gamma, &p.beta})) {
        out.set_requires_grad(true);
        Tensor gamma = p.gamma, beta = p.beta;
        Tape::active()->record({out}, [x, gamma, beta, out, mean = std::move(mean),
                                       inv_std = std::move(inv_std), rows, ch, inv_c] {
            const auto& go = out.grad();
            const auto& xd2 = x.data();
            const auto& gd2 = gamma.data();
            for (int64_t r = 0; r < rows; ++r) {
                const size_t base = static_cast<size_t>(r * ch);
                const double mu = mean[static_cast<size_t>(r)];
                const double is = inv_std[static_cast<size_t>(r)];
                double sum_g = 0.0, sum_g_xhat = 0.0;
                for (int64_t c = 0; c < ch; ++c) {
                    const double gy = go[base + static_cast<size_t>(c)];
                    const double xhat = (xd2[base + static_cast<size_t>(c)] - mu) * is;
                    const double gyg = gy * gd2[static_cast<size_t>(c)];
                    sum_g += gyg;
                    sum_g_xhat += gyg * xhat;
                    if (gamma.requires_grad()) gamma.grad()[static_cast<size_t>(c)] += gy * xhat;
                    if (beta.requires_grad()) beta.grad()[static_cast<size_t>(c)] += gy;
                }
                if (x.requires_grad()) {
                    auto& gx = x.grad();
                    const double mean_g = sum_g * inv_c;
                    const double mean_g_xhat = sum_g_xhat * inv_c;
                    for (int64_t c = 0; c < ch; ++c) {
                        const double gyg = go[base + static_cast<size_t>(c)] * gd2[static_cast<size_t>(c)];
                        const double xhat = (xd2[base + static_cast<size_t>(c)] - mu) * is;
                        gx[base + static_cast<size_t>(c)] += is * (gyg - mean_g - xhat * mean_g_xhat);
                    }
                }
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(w, 2, "linear weight");
    const int64_t in = w.extent(1), out_f = w.extent(0);
    if (x.extent(-1) != in) {
        throw ShapeError("linear: input features " + shape_to_string(x.shape()) +
                         " do not match weight " + shape_to_string(w.shape()));
    }
    if (b.defined() && (b.rank() != 1 || b.extent(0) != out_f)) {
        throw ShapeError("linear: bias extent mismatch");
    }
    const int64_t rows = x.numel() / in;
    Shape out_shape = x.shape();
    out_shape.back() = out_f;
    Tensor out(out_shape);
    const auto& xd = x.data();
    const auto& wd = w.data();
    auto& od = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const size_t xbase = static_cast<size_t>(r * in);
        const size_t obase = static_cast<size_t>(r * out_f);
        for (int64_t o = 0; o < out_f; ++o) {
            double acc = b.defined() ? b.data()[static_cast<size_t>(o)] : 0.0;
            const size_t wbase = static_cast<size_t>(o * in);
            for (int64_t i = 0; i < in; ++i) acc += xd[xbase + static_cast<size_t>(i)] * wd[wbase + static_cast<size_t>(i)];
            od[obase + static_cast<size_t>(o)] = acc;
        }
    }
    check_finite(out, "linear");

    if (tracked({&x, &w, &b})) {
        out.set_requires_grad(true);
        Tape::active()->record({out}, [x, w, b, out, rows, in, out_f] {
            const auto& go = out.grad();
            const auto& xd2 = x.data();
            const auto& wd2 = w.data();
            for (int64_t r = 0; r < rows; ++r) {
                const size_t xbase = static_cast<size_t>(r * in);
                const size_t obase = static_cast<size_t>(r * out_f);
                for (int64_t o = 0; o < out_f; ++o) {
                    const double gy = go[obase + static_cast<size_t>(o)];
                    if (gy == 0.0) continue;
                    const size_t wbase = static_cast<size_t>(o * in);
                    if (b.defined() && b.requires_grad()) b.grad()[static_cast<size_t>(o)] += gy;
                    if (x.requires_grad()) {
                        auto& gx = x.grad();
                        for (int64_t i = 0; i < in; ++i)
                            gx[xbase + static_cast<size_t>(i)] += gy * wd2[wbase + static_cast<size_t>(i)];
                    }
                    if (w.requires_grad()) {
                        auto& gw = w.grad();
                        for (int64_t i = 0; i < in; ++i)
                            gw[wbase + static_cast<size_t>(i)] += gy * xd2[xbase + static_cast<size_t>(i)];
                    }
                }
            }
        });
    }
    return out;
}

namespace {

// Shared machinery for the fixed channel permutations: out[..., j] =
// in[..., src[j]]. The gradient flows through the inverse permutation.
Tensor permute_last_axis(const Tensor& x, const std::vector<int64_t>& src, const char* name) {
    const int64_t c_out = static_cast<int64_t>(src.size());
    const int64_t c_in = x.extent(-1);
    const int64_t rows = x.numel() / c_in;
    Shape out_shape = x.shape();
    out_shape.back() = c_out;
    Tensor out(out_shape);
    const auto& xd = x.data();
    auto& od = out.data();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < c_out; ++j)
            od[static_cast<size_t>(r * c_out + j)] = xd[static_cast<size_t>(r * c_in + src[static_cast<size_t>(j)])];
    check_finite(out, name);
    if (tracked({&x})) {
        out.set_requires_grad(true);
        Tape::active()->record({out}, [x, out, src, rows, c_in, c_out] {
            const auto& go = out.grad();
            auto& gx = x.grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < c_out; ++j)
                    gx[static_cast<size_t>(r * c_in + src[static_cast<size_t>(j)])] += go[static_cast<size_t>(r * c_out + j)];
        });
    }
    return out;
}

}  // namespace

std::pair<Tensor, Tensor> channel_split(const Tensor& x) {
    const int64_t c = x.extent(-1);
    if (c % 2 != 0) {
        throw ValueError("channel_split: channel count must be even, got " + std::to_string(c));
    }
    std::vector<int64_t> lo(static_cast<size_t>(c / 2)), hi(static_cast<size_t>(c / 2));
    for (int64_t i = 0; i < c / 2; ++i) {
        lo[static_cast<size_t>(i)] = i;
        hi[static_cast<size_t>(i)] = c / 2 + i;
    }
    return {permute_last_axis(x, lo, "channel_split"), permute_last_axis(x, hi, "channel_split")};
}

Tensor channel_concat(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank()) throw ShapeError("channel_concat: rank mismatch");
    for (int64_t i = 0; i + 1 < a.rank(); ++i) {
        if (a.shape()[static_cast<size_t>(i)] != b.shape()[static_cast<size_t>(i)]) {
            throw ShapeError("channel_concat: leading extents differ: " + shape_to_string(a.shape()) +
                             " vs " + shape_to_string(b.shape()));
        }
    }
    const int64_t ca = a.extent(-1), cb = b.extent(-1);
    const int64_t rows = a.numel() / ca;
    Shape out_shape = a.shape();
    out_shape.back() = ca + cb;
    Tensor out(out_shape);
    const auto& ad = a.data();
    const auto& bd = b.data();
    auto& od = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t i = 0; i < ca; ++i) od[static_cast<size_t>(r * (ca + cb) + i)] = ad[static_cast<size_t>(r * ca + i)];
        for (int64_t i = 0; i < cb; ++i) od[static_cast<size_t>(r * (ca + cb) + ca + i)] = bd[static_cast<size_t>(r * cb + i)];
    }
    check_finite(out, "channel_concat");
    if (tracked({&a, &b})) {
        out.set_requires_grad(true);
        Tape::active()->record({out}, [a, b, out, rows, ca, cb] {
            const auto& go = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t i = 0; i < ca; ++i)
                        ga[static_cast<size_t>(r * ca + i)] += go[static_cast<size_t>(r * (ca + cb) + i)];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t i = 0; i < cb; ++i)
                        gb[static_cast<size_t>(r * cb + i)] += go[static_cast<size_t>(r * (ca + cb) + ca + i)];
            }
        });
    }
    return out;
}

Tensor channel_shuffle(const Tensor& x, int64_t groups) {
    const int64_t c = x.extent(-1);
    if (groups < 1 || c % groups != 0) {
        throw ValueError("channel_shuffle: " + std::to_string(c) + " channels not divisible by " +
                         std::to_string(groups) + " groups");
    }
    // Reshape C -> (groups, C/groups), transpose, flatten.
    const int64_t per = c / groups;
    std::vector<int64_t> src(static_cast<size_t>(c));
    for (int64_t k = 0; k < per; ++k)
        for (int64_t gi = 0; gi < groups; ++gi) src[static_cast<size_t>(k * groups + gi)] = gi * per + k;
    return permute_last_axis(x, src, "channel_shuffle");
}

Tensor permute_layout(const Tensor& x, Layout target) {
    require_rank(x, 4, "permute_layout");
    const auto& s = x.shape();
    Shape out_shape;
    // src index of each output element, computed on the fly in the loops.
    const int64_t b_n = s[0];
    int64_t ch, h, w;
    if (target == Layout::channels_first) {
        h = s[1];
        w = s[2];
        ch = s[3];
        out_shape = {b_n, ch, h, w};
    } else {
        ch = s[1];
        h = s[2];
        w = s[3];
        out_shape = {b_n, h, w, ch};
    }
    Tensor out(out_shape);
    const auto& xd = x.data();
    auto& od = out.data();
    for (int64_t b = 0; b < b_n; ++b)
        for (int64_t c = 0; c < ch; ++c)
            for (int64_t i = 0; i < h; ++i)
                for (int64_t j = 0; j < w; ++j) {
                    const size_t nhwc = static_cast<size_t>(((b * h + i) * w + j) * ch + c);
                    const size_t nchw = static_cast<size_t>(((b * ch + c) * h + i) * w + j);
                    if (target == Layout::channels_first)
                        od[nchw] = xd[nhwc];
                    else
                        od[nhwc] = xd[nchw];
                }
    check_finite(out, "permute_layout");
    if (tracked({&x})) {
        out.set_requires_grad(true);
        const bool to_first = target == Layout::channels_first;
        Tape::active()->record({out}, [x, out, b_n, ch, h, w, to_first] {
            const auto& go = out.grad();
            auto& gx = x.grad();
            for (int64_t b = 0; b < b_n; ++b)
                for (int64_t c = 0; c < ch; ++c)
                    for (int64_t i = 0; i < h; ++i)
                        for (int64_t j = 0; j < w; ++j) {
                            const size_t nhwc = static_cast<size_t>(((b * h + i) * w + j) * ch + c);
                            const size_t nchw = static_cast<size_t>(((b * ch + c) * h + i) * w + j);
                            if (to_first)
                                gx[nhwc] += go[nchw];
                            else
                                gx[nchw] += go[nhwc];
                        }
        });
    }
    return out;
}

Tensor adaptive_global_avg_pool(const Tensor& x) {
    require_rank(x, 4, "adaptive_global_avg_pool");
    const int64_t b_n = x.extent(0), h = x.extent(1), w = x.extent(2), ch = x.extent(3);
    const double inv = 1.0 / static_cast<double>(h * w);
    Tensor out(Shape{b_n, ch});
    const auto& xd = x.data();
    auto& od = out.data();
    for (int64_t b = 0; b < b_n; ++b)
        for (int64_t i = 0; i < h * w; ++i)
            for (int64_t c = 0; c < ch; ++c)
                od[static_cast<size_t>(b * ch + c)] += xd[static_cast<size_t>((b * h * w + i) * ch + c)] * inv;
    check_finite(out, "adaptive_global_avg_pool");
    if (tracked({&x})) {
        out.set_requires_grad(true);
        Tape::active()->record({out}, [x, out, b_n, h, w, ch, inv] {
            const auto& go = out.grad();
            auto& gx = x.grad();
            for (int64_t b = 0; b < b_n; ++b)
                for (int64_t i = 0; i < h * w; ++i)
                    for (int64_t c = 0; c < ch; ++c)
                        gx[static_cast<size_t>((b * h * w + i) * ch + c)] += go[static_cast<size_t>(b * ch + c)] * inv;
        });
    }
    return out;
}

Tensor pad_spatial_end(const Tensor& x, int64_t pad_h, int64_t pad_w) {
    require_rank(x, 4, "pad_spatial_end");
    if (pad_h < 0 || pad_w < 0) throw ValueError("pad_spatial_end: negative padding");
    const int64_t b_n = x.extent(0), h = x.extent(1), w = x.extent(2), ch = x.extent(3);
    const int64_t oh = h + pad_h, ow = w + pad_w;
    Tensor out(Shape{b_n, oh, ow, ch});
    const auto& xd = x.data();
    auto& od = out.data();
    for (int64_t b = 0; b < b_n; ++b)
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j)
                for (int64_t c = 0; c < ch; ++c)
                    od[static_cast<size_t>(((b * oh + i) * ow + j) * ch + c)] =
                        xd[static_cast<size_t>(((b * h + i) * w + j) * ch + c)];
    if (tracked({&x})) {
        out.set_requires_grad(true);
        Tape::active()->record({out}, [x, out, b_n, h, w, ch, oh, ow] {
            const auto& go = out.grad();
            auto& gx = x.grad();
            for (int64_t b = 0; b < b_n; ++b)
                for (int64_t i = 0; i < h; ++i)
                    for (int64_t j = 0; j < w; ++j)
                        for (int64_t c = 0; c < ch; ++c)
                            gx[static_cast<size_t>(((b * h + i) * w + j) * ch + c)] +=
                                go[static_cast<size_t>(((b * oh + i) * ow + j) * ch + c)];
        });
    }
    return out;
}

Tensor space_to_depth2(const Tensor& x) {
    require_rank(x, 4, "space_to_depth2");
    const int64_t b_n = x.extent(0), h = x.extent(1), w = x.extent(2), ch = x.extent(3);
    const int64_t oh = (h + 1) / 2, ow = (w + 1) / 2;
    static constexpr int64_t kQuadDh[4] = {0, 1, 0, 1};
    static constexpr int64_t kQuadDw[4] = {0, 0, 1, 1};
    Tensor out(Shape{b_n, oh, ow, 4 * ch});
    const auto& xd = x.data();
    auto& od = out.data();
    for (int64_t b = 0; b < b_n; ++b)
        for (int64_t i = 0; i < oh; ++i)
            for (int64_t j = 0; j < ow; ++j)
                for (int64_t q = 0; q < 4; ++q) {
                    const int64_t ih = 2 * i + kQuadDh[q];
                    const int64_t iw = 2 * j + kQuadDw[q];
                    if (ih >= h || iw >= w) continue;  // zero padding
                    const size_t src = static_cast<size_t>(((b * h + ih) * w + iw) * ch);
                    const size_t dst = static_cast<size_t>((((b * oh + i) * ow + j) * 4 + q) * ch);
                    for (int64_t c = 0; c < ch; ++c) od[dst + static_cast<size_t>(c)] = xd[src + static_cast<size_t>(c)];
                }
    check_finite(out, "space_to_depth2");
    if (tracked({&x})) {
        out.set_requires_grad(true);
        Tape::active()->record({out}, [x, out, b_n, h, w, ch, oh, ow] {
            const auto& go = out.grad();
            auto& gx = x.grad();
            for (int64_t b = 0; b < b_n; ++b)
                for (int64_t i = 0; i < oh; ++i)
                    for (int64_t j = 0; j < ow; ++j)
                        for (int64_t q = 0; q < 4; ++q) {
                            const int64_t ih = 2 * i + kQuadDh[q];
                            const int64_t iw = 2 * j + kQuadDw[q];
                            if (ih >= h || iw >= w) continue;
                            const size_t src = static_cast<size_t>(((b * h + ih) * w + iw) * ch);
                            const size_t dst = static_cast<size_t>((((b * oh + i) * ow + j) * 4 + q) * ch);
                            for (int64_t c = 0; c < ch; ++c) gx[src + static_cast<size_t>(c)] += go[dst + static_cast<size_t>(c)];
                        }
        });
    }
    return out;
}

std::vector<double> softmax_row(std::span<const double> logits) {
    double mx = logits[0];
    for (double v : logits) mx = v > mx ? v : mx;
    std::vector<double> out(logits.size());
    double denom = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        denom += out[i];
    }
    for (double& v : out) v /= denom;
    return out;
}

}  // namespace dmamba
