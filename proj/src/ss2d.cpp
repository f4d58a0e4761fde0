#include "dmamba/ss2d.hpp"

#include "dmamba/ops.hpp"

namespace dmamba {

using detail::check_finite;
using detail::tracked;

int64_t scan_source_index(int direction, int64_t t, int64_t height, int64_t width) {
    const int64_t total = height * width;
    switch (direction) {
        case 0:  // row-major forward
            return t;
        case 1:  // row-major reversed
            return total - 1 - t;
        case 2: {  // column-major forward
            const int64_t col = t / height, row = t % height;
            return row * width + col;
        }
        case 3: {  // column-major reversed
            const int64_t tt = total - 1 - t;
            const int64_t col = tt / height, row = tt % height;
            return row * width + col;
        }
        default:
            throw ValueError("scan direction must be in [0, 4)");
    }
}

Tensor scan_gather(const Tensor& x, int direction) {
    if (x.rank() != 4) throw ShapeError("scan_gather: expected [B,H,W,C]");
    const int64_t batch = x.extent(0), h = x.extent(1), w = x.extent(2), ch = x.extent(3);
    const int64_t len = h * w;
    Tensor out(Shape{batch, len, ch});
    const auto& xd = x.data();
    auto& od = out.data();
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t t = 0; t < len; ++t) {
            const int64_t src = scan_source_index(direction, t, h, w);
            const size_t sbase = static_cast<size_t>((b * len + src) * ch);
            const size_t dbase = static_cast<size_t>((b * len + t) * ch);
            for (int64_t c = 0; c < ch; ++c) od[dbase + static_cast<size_t>(c)] = xd[sbase + static_cast<size_t>(c)];
        }
    if (tracked({&x})) {
        out.set_requires_grad(true);
        Tape::active()->record({out}, [x, out, direction, batch, h, w, ch, len] {
            const auto& go = out.grad();
            auto& gx = x.grad();
            for (int64_t b = 0; b < batch; ++b)
                for (int64_t t = 0; t < len; ++t) {
                    const int64_t src = scan_source_index(direction, t, h, w);
                    const size_t sbase = static_cast<size_t>((b * len + src) * ch);
                    const size_t dbase = static_cast<size_t>((b * len + t) * ch);
                    for (int64_t c = 0; c < ch; ++c) gx[sbase + static_cast<size_t>(c)] += go[dbase + static_cast<size_t>(c)];
                }
        });
    }
    return out;
}

Tensor scan_scatter(const Tensor& seq, int direction, int64_t height, int64_t width) {
    if (seq.rank() != 3) throw ShapeError("scan_scatter: expected [B,L,C]");
    const int64_t batch = seq.extent(0), len = seq.extent(1), ch = seq.extent(2);
    if (len != height * width) {
        throw ShapeError("scan_scatter: sequence length " + std::to_string(len) +
                         " does not match " + std::to_string(height) + "x" + std::to_string(width));
    }
    Tensor out(Shape{batch, height, width, ch});
    const auto& sd = seq.data();
    auto& od = out.data();
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t t = 0; t < len; ++t) {
            const int64_t dst = scan_source_index(direction, t, height, width);
            const size_t dbase = static_cast<size_t>((b * len + dst) * ch);
            const size_t sbase = static_cast<size_t>((b * len + t) * ch);
            for (int64_t c = 0; c < ch; ++c) od[dbase + static_cast<size_t>(c)] = sd[sbase + static_cast<size_t>(c)];
        }
    if (tracked({&seq})) {
        out.set_requires_grad(true);
        Tape::active()->record({out}, [seq, out, direction, batch, height, width, ch, len] {
            const auto& go = out.grad();
            auto& gs = seq.grad();
            for (int64_t b = 0; b < batch; ++b)
                for (int64_t t = 0; t < len; ++t) {
                    const int64_t dst = scan_source_index(direction, t, height, width);
                    const size_t dbase = static_cast<size_t>((b * len + dst) * ch);
                    const size_t sbase = static_cast<size_t>((b * len + t) * ch);
                    for (int64_t c = 0; c < ch; ++c) gs[sbase + static_cast<size_t>(c)] += go[dbase + static_cast<size_t>(c)];
                }
        });
    }
    return out;
}

std::array<Tensor, kScanDirections> cross_scan_expand(const Tensor& x) {
    return {scan_gather(x, 0), scan_gather(x, 1), scan_gather(x, 2), scan_gather(x, 3)};
}

Tensor cross_scan_merge(const std::array<Tensor, kScanDirections>& seqs, int64_t height,
                        int64_t width) {
    for (int d = 1; d < kScanDirections; ++d) {
        if (seqs[static_cast<size_t>(d)].shape() != seqs[0].shape()) {
            throw ShapeError("cross_scan_merge: inconsistent sequence shapes");
        }
    }
    Tensor acc = scan_scatter(seqs[0], 0, height, width);
    for (int d = 1; d < kScanDirections; ++d) {
        acc = add(acc, scan_scatter(seqs[static_cast<size_t>(d)], d, height, width));
    }
    return acc;
}

std::vector<std::pair<std::string, Tensor>> SS2DWeights::named_params(
    const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (int d = 0; d < kScanDirections; ++d) {
        auto sub = direction[static_cast<size_t>(d)].named_params(prefix + ".dir" + std::to_string(d));
        out.insert(out.end(), sub.begin(), sub.end());
    }
    return out;
}

SS2DWeights make_ss2d_weights(int64_t channels, int64_t state, Rng& rng, bool use_d_skip) {
    SS2DWeights w;
    for (int d = 0; d < kScanDirections; ++d)
        w.direction[static_cast<size_t>(d)] = make_s6_weights(channels, state, rng, use_d_skip);
    return w;
}

SS2DWeights make_shared_ss2d_weights(const S6Weights& shared) {
    SS2DWeights w;
    for (int d = 0; d < kScanDirections; ++d) w.direction[static_cast<size_t>(d)] = shared;
    return w;
}

std::array<Tensor, kScanDirections> ss2d_direction_outputs(const Tensor& x,
                                                           const SS2DWeights& w) {
    auto seqs = cross_scan_expand(x);
    std::array<Tensor, kScanDirections> out;
    for (int d = 0; d < kScanDirections; ++d)
        out[static_cast<size_t>(d)] = s6_selective_scan(seqs[static_cast<size_t>(d)], w.direction[static_cast<size_t>(d)]);
    return out;
}

Tensor ss2d_forward(const Tensor& x, const SS2DWeights& w) {
    const int64_t h = x.extent(1), width = x.extent(2);
    return cross_scan_merge(ss2d_direction_outputs(x, w), h, width);
}

}  // namespace dmamba
