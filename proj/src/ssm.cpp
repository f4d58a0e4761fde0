#include "dmamba/ssm.hpp"

#include <chrono>
#include <cmath>

#include "dmamba/fastmath.hpp"
#include "dmamba/nn_ops.hpp"
#include "dmamba/ops.hpp"

namespace dmamba {

using detail::check_finite;
using detail::tracked;

namespace {

// Bb = phi(a, delta) * b with the series limit below the 0/0 threshold.
// The backward pass must differentiate exactly this branch structure.
constexpr double kZohSeriesThreshold = 1e-8;

inline double zoh_phi(double a, double delta, double a_bar) {
    return std::fabs(delta * a) < kZohSeriesThreshold ? delta : (a_bar - 1.0) / a;
}

}  // namespace

DiscreteSSM zoh_discretize(std::span<const double> a_diag, std::span<const double> b,
                           double delta) {
    if (delta <= 0.0) throw ValueError("zoh_discretize: delta must be positive");
    if (a_diag.size() != b.size()) throw ShapeError("zoh_discretize: extent mismatch a vs b");
    DiscreteSSM d;
    d.a_bar.resize(a_diag.size());
    d.b_bar.resize(a_diag.size());
    for (size_t i = 0; i < a_diag.size(); ++i) {
        const double ab = std::exp(delta * a_diag[i]);
        d.a_bar[i] = ab;
        d.b_bar[i] = zoh_phi(a_diag[i], delta, ab) * b[i];
    }
    return d;
}

std::vector<double> ssm_recurrence(const DiscreteSSM& d, std::span<const double> c,
                                   std::span<const double> x, std::span<const double> h0) {
    const size_t n = d.a_bar.size();
    if (c.size() != n || d.b_bar.size() != n) throw ShapeError("ssm_recurrence: extent mismatch");
    if (!h0.empty() && h0.size() != n) {
        throw ShapeError("ssm_recurrence: h0 extent " + std::to_string(h0.size()) +
                         " does not match state size " + std::to_string(n));
    }
    std::vector<double> h(n, 0.0);
    if (!h0.empty()) h.assign(h0.begin(), h0.end());
    std::vector<double> y(x.size(), 0.0);
    for (size_t t = 0; t < x.size(); ++t) {
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) {
            h[i] = d.a_bar[i] * h[i] + d.b_bar[i] * x[t];
            acc += c[i] * h[i];
        }
        y[t] = acc;
    }
    return y;
}

std::vector<double> ssm_conv_kernel(const DiscreteSSM& d, std::span<const double> c, int64_t len) {
    const size_t n = d.a_bar.size();
    if (c.size() != n) throw ShapeError("ssm_conv_kernel: extent mismatch");
    if (len < 1) throw ValueError("ssm_conv_kernel: len must be >= 1");
    std::vector<double> kernel(static_cast<size_t>(len), 0.0);
    std::vector<double> pow_a(d.b_bar.begin(), d.b_bar.end());  // Ab^t Bb, starting at t = 0
    for (int64_t t = 0; t < len; ++t) {
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) acc += c[i] * pow_a[i];
        kernel[static_cast<size_t>(t)] = acc;
        for (size_t i = 0; i < n; ++i) pow_a[i] *= d.a_bar[i];
    }
    return kernel;
}

std::vector<double> ssm_apply_conv(std::span<const double> x, std::span<const double> kernel) {
    if (x.size() != kernel.size()) {
        throw ShapeError("ssm_apply_conv: kernel length " + std::to_string(kernel.size()) +
                         " does not match sequence length " + std::to_string(x.size()));
    }
    std::vector<double> y(x.size(), 0.0);
    for (size_t t = 0; t < x.size(); ++t) {
        double acc = 0.0;
        for (size_t tau = 0; tau <= t; ++tau) acc += kernel[tau] * x[t - tau];
        y[t] = acc;
    }
    return y;
}

Tensor ssm_recurrence_batch(const Tensor& x, const Tensor& a, const Tensor& b, const Tensor& c,
                            double delta) {
    if (x.rank() != 3) throw ShapeError("ssm_recurrence_batch: x must be [B,L,D]");
    const int64_t batch = x.extent(0), len = x.extent(1), ch = x.extent(2);
    if (a.rank() != 2 || a.shape() != b.shape() || a.shape() != c.shape() || a.extent(0) != ch) {
        throw ShapeError("ssm_recurrence_batch: parameter extents mismatch");
    }
    const int64_t n = a.extent(1);
    Tensor out(x.shape());
    const auto& xd = x.data();
    auto& od = out.data();
    for (int64_t d = 0; d < ch; ++d) {
        std::span<const double> a_row(a.data().data() + d * n, static_cast<size_t>(n));
        std::span<const double> b_row(b.data().data() + d * n, static_cast<size_t>(n));
        std::span<const double> c_row(c.data().data() + d * n, static_cast<size_t>(n));
        const DiscreteSSM disc = zoh_discretize(a_row, b_row, delta);
        for (int64_t bi = 0; bi < batch; ++bi) {
            std::vector<double> seq(static_cast<size_t>(len));
            for (int64_t t = 0; t < len; ++t) seq[static_cast<size_t>(t)] = xd[static_cast<size_t>((bi * len + t) * ch + d)];
            const auto y = ssm_recurrence(disc, c_row, seq);
            for (int64_t t = 0; t < len; ++t) od[static_cast<size_t>((bi * len + t) * ch + d)] = y[static_cast<size_t>(t)];
        }
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> S6Weights::named_params(
    const std::string& prefix) const {
    return {{prefix + ".a_log", a_log},     {prefix + ".d_skip", d_skip},
            {prefix + ".w_delta", w_delta}, {prefix + ".b_delta", b_delta},
            {prefix + ".w_b", w_b},         {prefix + ".b_b", b_b},
            {prefix + ".w_c", w_c},         {prefix + ".b_c", b_c}};
}

S6Weights make_s6_weights(int64_t channels, int64_t state, Rng& rng, bool use_d_skip) {
    S6Weights w;
    w.use_d_skip = use_d_skip;
    w.a_log = Tensor(Shape{channels, state});
    for (int64_t d = 0; d < channels; ++d)
        for (int64_t n = 0; n < state; ++n)
            w.a_log.data()[static_cast<size_t>(d * state + n)] = std::log(static_cast<double>(n + 1));
    w.d_skip = Tensor(Shape{channels}, 1.0);

    const double proj_bound = 1.0 / std::sqrt(static_cast<double>(channels));
    auto fill_uniform = [&](Tensor& t, double bound) {
        for (double& v : t.data()) v = rng.uniform(-bound, bound);
    };
    w.w_delta = Tensor(Shape{channels, channels});
    fill_uniform(w.w_delta, proj_bound);
    w.b_delta = Tensor(Shape{channels});
    for (double& v : w.b_delta.data()) {
        // softplus(b) log-uniform in [1e-3, 1e-1]; inverse softplus ln(e^y - 1).
        const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
        v = std::log(std::expm1(dt));
    }
    w.w_b = Tensor(Shape{state, channels});
    fill_uniform(w.w_b, proj_bound);
    w.b_b = Tensor(Shape{state});
    w.w_c = Tensor(Shape{state, channels});
    fill_uniform(w.w_c, proj_bound);
    w.b_c = Tensor(Shape{state});
    return w;
}

Tensor selective_scan_op(const Tensor& u, const Tensor& delta_pre, const Tensor& a_log,
                         const Tensor& b_seq, const Tensor& c_seq, const Tensor& d_skip,
                         bool use_d_skip) {
    if (u.rank() != 3) throw ShapeError("selective_scan: input must be [B,L,D]");
    const int64_t batch = u.extent(0), len = u.extent(1), ch = u.extent(2);
    const int64_t n = a_log.extent(1);
    if (delta_pre.shape() != u.shape()) throw ShapeError("selective_scan: delta extent mismatch");
    if (a_log.extent(0) != ch) throw ShapeError("selective_scan: a_log extent mismatch");
    if (b_seq.rank() != 3 || b_seq.extent(0) != batch || b_seq.extent(1) != len ||
        b_seq.extent(2) != n || b_seq.shape() != c_seq.shape()) {
        throw ShapeError("selective_scan: B/C projection extent mismatch");
    }
    if (d_skip.extent(0) != ch) throw ShapeError("selective_scan: d_skip extent mismatch");

    // a = -exp(a_log), strictly negative.
    std::vector<double> a_val(static_cast<size_t>(ch * n));
    for (size_t i = 0; i < a_val.size(); ++i) a_val[i] = -std::exp(a_log.data()[i]);

    const auto& ud = u.data();
    const auto& pd = delta_pre.data();
    const auto& bd = b_seq.data();
    const auto& cd = c_seq.data();
    const auto& dd = d_skip.data();

    // Caches for the backward pass: states and discrete-A per step.
    std::vector<double> h_all(static_cast<size_t>(batch * len * ch * n));
    std::vector<double> abar_all(static_cast<size_t>(batch * len * ch * n));
    std::vector<double> delta_all(static_cast<size_t>(batch * len * ch));

    Tensor out(u.shape());
    auto& od = out.data();
    for (int64_t bi = 0; bi < batch; ++bi) {
        for (int64_t t = 0; t < len; ++t) {
            const size_t row = static_cast<size_t>((bi * len + t));
            const size_t urow = row * static_cast<size_t>(ch);
            const size_t brow = row * static_cast<size_t>(n);
            for (int64_t d = 0; d < ch; ++d) {
                const double delta = softplus_scalar(pd[urow + static_cast<size_t>(d)]);
                delta_all[urow + static_cast<size_t>(d)] = delta;
                const double ut = ud[urow + static_cast<size_t>(d)];
                const size_t hbase = (row * static_cast<size_t>(ch) + static_cast<size_t>(d)) * static_cast<size_t>(n);
                const size_t step = static_cast<size_t>(ch * n);
                double acc = 0.0;
                for (int64_t k = 0; k < n; ++k) {
                    const double a = a_val[static_cast<size_t>(d * n + k)];
                    const double abar = fastmath::exp(delta * a);
                    const double phi = zoh_phi(a, delta, abar);
                    const double hprev = t > 0 ? h_all[hbase - step + static_cast<size_t>(k)] : 0.0;
                    const double h = abar * hprev + phi * bd[brow + static_cast<size_t>(k)] * ut;
                    h_all[hbase + static_cast<size_t>(k)] = h;
                    abar_all[hbase + static_cast<size_t>(k)] = abar;
                    acc += cd[brow + static_cast<size_t>(k)] * h;
                }
                if (use_d_skip) acc += dd[static_cast<size_t>(d)] * ut;
                od[urow + static_cast<size_t>(d)] = acc;
            }
        }
    }
    check_finite(out, "selective_scan");

    if (tracked({&u, &delta_pre, &a_log, &b_seq, &c_seq, &d_skip})) {
        out.set_requires_grad(true);
        Tape::active()->record({out}, [u, delta_pre, a_log, b_seq, c_seq, d_skip, out, use_d_skip,
                                       batch, len, ch, n, a_val = std::move(a_val),
                                       h_all = std::move(h_all), abar_all = std::move(abar_all),
                                       delta_all = std::move(delta_all)] {
            const auto& go = out.grad();
            const auto& ud2 = u.data();
            const auto& bd2 = b_seq.data();
            const auto& cd2 = c_seq.data();
            const auto& dd2 = d_skip.data();
            const bool need_u = u.requires_grad();
            const bool need_delta = delta_pre.requires_grad();
            const bool need_a = a_log.requires_grad();
            const bool need_b = b_seq.requires_grad();
            const bool need_c = c_seq.requires_grad();
            const bool need_d = use_d_skip && d_skip.requires_grad();

            std::vector<double> ga_local(static_cast<size_t>(ch * n), 0.0);
            std::vector<double> gh(static_cast<size_t>(ch * n));
            for (int64_t bi = 0; bi < batch; ++bi) {
                std::fill(gh.begin(), gh.end(), 0.0);
                for (int64_t t = len - 1; t >= 0; --t) {
                    const size_t row = static_cast<size_t>(bi * len + t);
                    const size_t urow = row * static_cast<size_t>(ch);
                    const size_t brow = row * static_cast<size_t>(n);
                    for (int64_t d = 0; d < ch; ++d) {
                        const double gy = go[urow + static_cast<size_t>(d)];
                        const double ut = ud2[urow + static_cast<size_t>(d)];
                        const double delta = delta_all[urow + static_cast<size_t>(d)];
                        const size_t hbase =
                            (row * static_cast<size_t>(ch) + static_cast<size_t>(d)) * static_cast<size_t>(n);
                        const size_t ghbase = static_cast<size_t>(d * n);
                        if (gy != 0.0) {
                            if (need_d) d_skip.grad()[static_cast<size_t>(d)] += gy * ut;
                            if (need_u && use_d_skip)
                                u.grad()[urow + static_cast<size_t>(d)] += gy * dd2[static_cast<size_t>(d)];
                        }
                        double gdelta = 0.0;
                        for (int64_t k = 0; k < n; ++k) {
                            double ghk = gh[ghbase + static_cast<size_t>(k)];
                            if (gy != 0.0) {
                                ghk += gy * cd2[brow + static_cast<size_t>(k)];
                                if (need_c)
                                    c_seq.grad()[brow + static_cast<size_t>(k)] += gy * h_all[hbase + static_cast<size_t>(k)];
                            }
                            const double a = a_val[static_cast<size_t>(d * n + k)];
                            const double abar = abar_all[hbase + static_cast<size_t>(k)];
                            const double phi = zoh_phi(a, delta, abar);
                            const double hprev =
                                t > 0 ? h_all[hbase - static_cast<size_t>(ch * n) + static_cast<size_t>(k)] : 0.0;
                            const double bk = bd2[brow + static_cast<size_t>(k)];
                            // h = abar*hprev + phi*b*u
                            const double g_abar = ghk * hprev;
                            const double g_phi = ghk * bk * ut;
                            if (need_b) b_seq.grad()[brow + static_cast<size_t>(k)] += ghk * phi * ut;
                            if (need_u) u.grad()[urow + static_cast<size_t>(d)] += ghk * phi * bk;
                            const bool series = std::fabs(delta * a) < kZohSeriesThreshold;
                            gdelta += g_abar * a * abar + (series ? g_phi : g_phi * abar);
                            if (need_a) {
                                double ga = g_abar * delta * abar;
                                if (!series) {
                                    const double z = delta * a;
                                    ga += g_phi * (z * abar - abar + 1.0) / (a * a);
                                }
                                ga_local[static_cast<size_t>(d * n + k)] += ga;
                            }
                            gh[ghbase + static_cast<size_t>(k)] = ghk * abar;
                        }
                        if (need_delta && gdelta != 0.0) {
                            // d softplus(p)/dp = sigmoid(p) = 1 - exp(-softplus(p)).
                            delta_pre.grad()[urow + static_cast<size_t>(d)] +=
                                gdelta * (1.0 - fastmath::exp(-delta));
                        }
                    }
                }
            }
            if (need_a) {
                auto& ga_log = a_log.grad();
                for (size_t i = 0; i < ga_local.size(); ++i) ga_log[i] += ga_local[i] * a_val[i];
            }
        });
    }
    return out;
}

Tensor s6_selective_scan(const Tensor& x, const S6Weights& w) {
    Tensor delta_pre = linear(x, w.w_delta, w.b_delta);
    Tensor b_seq = linear(x, w.w_b, w.b_b);
    Tensor c_seq = linear(x, w.w_c, w.b_c);
    return selective_scan_op(x, delta_pre, w.a_log, b_seq, c_seq, w.d_skip, w.use_d_skip);
}

ScanBenchResult run_scan_bench(const std::vector<int64_t>& lengths, int64_t state, int64_t iters,
                               uint64_t seed) {
    if (lengths.empty()) throw ValueError("run_scan_bench: no lengths given");
    if (iters < 1) throw ValueError("run_scan_bench: iters must be >= 1");
    Rng rng(seed);
    ScanBenchResult result;
    using clock = std::chrono::steady_clock;

    for (int64_t len : lengths) {
        std::vector<double> a(static_cast<size_t>(state)), b(static_cast<size_t>(state)), c(static_cast<size_t>(state));
        for (auto& v : a) v = rng.uniform(-5.0, -0.05);
        for (auto& v : b) v = rng.uniform(-1.0, 1.0);
        for (auto& v : c) v = rng.uniform(-1.0, 1.0);
        const double delta = rng.uniform(0.01, 1.0);
        std::vector<double> x(static_cast<size_t>(len));
        for (auto& v : x) v = rng.uniform(-1.0, 1.0);

        const DiscreteSSM disc = zoh_discretize(a, b, delta);
        const auto y_rec = ssm_recurrence(disc, c, x);
        const auto kernel = ssm_conv_kernel(disc, c, len);
        const auto y_conv = ssm_apply_conv(x, kernel);
        double err = 0.0;
        for (size_t i = 0; i < y_rec.size(); ++i)
            err = std::max(err, std::fabs(y_rec[i] - y_conv[i]));

        double rec_best = 1e300;
        volatile double sink = 0.0;
        for (int64_t it = 0; it < iters; ++it) {
            const auto t0 = clock::now();
            const auto y = ssm_recurrence(disc, c, x);
            const auto t1 = clock::now();
            sink = sink + y.back();
            rec_best = std::min(rec_best, std::chrono::duration<double>(t1 - t0).count());
        }
        double conv_best = 1e300;
        const int64_t conv_iters = std::min<int64_t>(iters, 3);
        for (int64_t it = 0; it < conv_iters; ++it) {
            const auto t0 = clock::now();
            const auto y = ssm_apply_conv(x, kernel);
            const auto t1 = clock::now();
            sink = sink + y.back();
            conv_best = std::min(conv_best, std::chrono::duration<double>(t1 - t0).count());
        }
        result.rows.push_back({len, rec_best, conv_best, err});
        result.max_equiv_err = std::max(result.max_equiv_err, err);
    }

    // Least-squares fit of log(recurrence time) against log(L).
    const size_t m = result.rows.size();
    if (m >= 2) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
        for (const auto& row : result.rows) {
            const double lx = std::log(static_cast<double>(row.len));
            const double ly = std::log(std::max(row.recurrence_sec, 1e-12));
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
            syy += ly * ly;
        }
        const double dm = static_cast<double>(m);
        const double cov = sxy - sx * sy / dm;
        const double var_x = sxx - sx * sx / dm;
        const double var_y = syy - sy * sy / dm;
        result.loglog_slope = cov / var_x;
        result.loglog_r2 = var_y > 0.0 ? (cov * cov) / (var_x * var_y) : 1.0;
    }
    return result;
}

}  // namespace dmamba
