#pragma once

#include <array>

#include "dmamba/ssm.hpp"
#include "dmamba/tensor.hpp"

namespace dmamba {

// 2D selective scan: a feature map is unfolded into four directional
// sequences, each processed by its own selective scan, and the results are
// folded back and summed. The four traversals realize the corner-to-corner
// scans as raster orders:
//   0: row-major forward          1: row-major reversed
//   2: column-major forward       3: column-major reversed
// Each direction is a bijective reindexing of the H*W positions, so
// merge(expand(x)) with pass-through scans gives exactly 4x.

inline constexpr int kScanDirections = 4;

// Flat source position (h*W + w) of scan step t in the given direction.
int64_t scan_source_index(int direction, int64_t t, int64_t height, int64_t width);

// [B,H,W,C] -> one [B,L,C] sequence per direction, L = H*W.
std::array<Tensor, kScanDirections> cross_scan_expand(const Tensor& x);

// Single-direction forms, for composing and testing.
Tensor scan_gather(const Tensor& x, int direction);
Tensor scan_scatter(const Tensor& seq, int direction, int64_t height, int64_t width);

// Inverts each traversal back to [B,H,W,C] and sums the four maps.
Tensor cross_scan_merge(const std::array<Tensor, kScanDirections>& seqs, int64_t height,
                        int64_t width);

struct SS2DWeights {
    std::array<S6Weights, kScanDirections> direction;

    std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
};

SS2DWeights make_ss2d_weights(int64_t channels, int64_t state, Rng& rng, bool use_d_skip = true);

// Ties all four directions to the same parameter tensors (used by the
// geometric-symmetry tests).
SS2DWeights make_shared_ss2d_weights(const S6Weights& shared);

// expand -> per-direction selective scan -> merge; shape-preserving.
Tensor ss2d_forward(const Tensor& x, const SS2DWeights& w);

// Per-direction scan outputs before merging, exposed for the symmetry tests.
std::array<Tensor, kScanDirections> ss2d_direction_outputs(const Tensor& x, const SS2DWeights& w);

}  // namespace dmamba
