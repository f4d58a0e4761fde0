#pragma once

#include <utility>

#include "dmamba/ops.hpp"
#include "dmamba/tensor.hpp"

namespace dmamba {

// Layer primitives for the dual-branch blocks. Feature maps travel
// channels-last [B,H,W,C]; convolutions and batch norm run channels-first
// [B,C,H,W], bridged by permute_layout exactly where the block definition
// permutes. Convolution follows the cross-correlation convention (no kernel
// flip) with zero padding.

struct Conv2DParams {
    Tensor kernel;  // [out_ch, in_ch/groups, kh, kw]
    Tensor bias;    // [out_ch], optional (undefined handle = no bias)
    int64_t stride = 1;
    int64_t padding = 0;
    int64_t groups = 1;
};

Tensor conv2d(const Tensor& x, const Conv2DParams& p);  // x [B,C,H,W]

struct NormParams {
    Tensor gamma;  // [C]
    Tensor beta;   // [C]
    Tensor running_mean;  // [C], batch norm only
    Tensor running_var;   // [C], batch norm only
    double eps = 1e-5;
    double momentum = 0.1;
};

enum class NormMode { train, eval };

// Per-channel normalization over (B,H,W) of an NCHW map. Train mode uses
// batch statistics (population variance) and updates running stats with
// momentum (unbiased variance, matching common framework behaviour); eval
// mode uses the running stats. Requires B >= 2 in train mode.
Tensor batchnorm2d(const Tensor& x, NormParams& p, NormMode mode);

// Normalizes over the last (channel) axis per position, population variance.
Tensor layernorm(const Tensor& x, const NormParams& p);

// Affine map over the last axis: y = x W^T + b. w is [out,in], b [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Channel (last-axis) regrouping ops; all are fixed permutations.
std::pair<Tensor, Tensor> channel_split(const Tensor& x);
Tensor channel_concat(const Tensor& a, const Tensor& b);
Tensor channel_shuffle(const Tensor& x, int64_t groups = 2);

enum class Layout { channels_first, channels_last };

// Reorders a 4-D tensor between [B,H,W,C] and [B,C,H,W]; the input is
// assumed to be in the opposite layout of `target`.
Tensor permute_layout(const Tensor& x, Layout target);

// [B,H,W,C] -> [B,C]: spatial mean per channel.
Tensor adaptive_global_avg_pool(const Tensor& x);

// Appends zero rows/columns at the bottom/right of an NHWC map.
Tensor pad_spatial_end(const Tensor& x, int64_t pad_h, int64_t pad_w);

// Groups each 2x2 spatial neighbourhood of an NHWC map into the channel
// axis: [B,H,W,C] -> [B,ceil(H/2),ceil(W/2),4C], zero-padding odd extents.
// Quadrant order: (0,0), (1,0), (0,1), (1,1).
Tensor space_to_depth2(const Tensor& x);

// Softmax over a logits row; plain helper, not a tape op.
std::vector<double> softmax_row(std::span<const double> logits);

}  // namespace dmamba
