#pragma once

#include <span>
#include <vector>

#include "dmamba/rng.hpp"
#include "dmamba/tensor.hpp"

namespace dmamba {

// State-space kernels. The diagonal system per channel is
//   h_t = Ab h_{t-1} + Bb x_t,   y_t = c . h_t
// with (Ab, Bb) produced from continuous (a, b) by zero-order hold under a
// step delta: Ab = exp(delta a), Bb = ((exp(delta a) - 1)/a) b. The state
// update precedes the readout, so the impulse response starts at c.Bb.
//
// The plain-vector functions below are the time-invariant reference forms
// (recurrence, kernel, causal convolution); they are not differentiated and
// serve as oracles and benchmarks. The selective scan further down is the
// trainable, input-dependent variant.

struct DiscreteSSM {
    std::vector<double> a_bar;
    std::vector<double> b_bar;
};

// Elementwise ZOH over the N diagonal entries. For |delta*a| < 1e-8 the
// 0/0 in Bb is replaced by its series limit delta*b. Throws ValueError for
// delta <= 0.
DiscreteSSM zoh_discretize(std::span<const double> a_diag, std::span<const double> b, double delta);

// y_t for one channel; h0 defaults to zero and must have extent N.
std::vector<double> ssm_recurrence(const DiscreteSSM& d, std::span<const double> c,
                                   std::span<const double> x, std::span<const double> h0 = {});

// Kernel (c.Bb, c.Ab Bb, ..., c.Ab^{len-1} Bb), summed over states.
std::vector<double> ssm_conv_kernel(const DiscreteSSM& d, std::span<const double> c, int64_t len);

// Causal convolution y_t = sum_{tau<=t} kernel[tau] x_{t-tau}; kernel length
// must equal the sequence length.
std::vector<double> ssm_apply_conv(std::span<const double> x, std::span<const double> kernel);

// Batched time-invariant recurrence on x [B,L,D] with per-channel diagonal
// parameters a, b, c of shape [D,N] and one shared step delta. Forward-only.
Tensor ssm_recurrence_batch(const Tensor& x, const Tensor& a, const Tensor& b, const Tensor& c,
                            double delta);

// Input-dependent (selective) scan parameters for one scan direction over
// sequences of D channels with N states per channel. delta_t, B_t, C_t are
// projections of the current input; A is diagonal, parameterized as
// -exp(a_log) so it stays strictly negative.
struct S6Weights {
    Tensor a_log;    // [D, N]
    Tensor d_skip;   // [D]
    Tensor w_delta;  // [D, D]
    Tensor b_delta;  // [D]
    Tensor w_b;      // [N, D]
    Tensor b_b;      // [N]
    Tensor w_c;      // [N, D]
    Tensor b_c;      // [N]
    bool use_d_skip = true;

    int64_t channels() const { return a_log.extent(0); }
    int64_t state_size() const { return a_log.extent(1); }
    std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
};

// a_log initialized to log(1..N) per channel; the delta bias places
// softplus(b_delta) log-uniformly in [1e-3, 1e-1]; projections start at
// U(+-1/sqrt(D)); b_b = b_c = 0 and d_skip = 1.
S6Weights make_s6_weights(int64_t channels, int64_t state, Rng& rng, bool use_d_skip = true);

// Selective scan over x [B,L,D]:
//   delta_t = softplus(W_d x_t + b_d), B_t = W_b x_t + b_b, C_t = W_c x_t + b_c
//   (Ab_t, Bb_t) = ZOH(A, B_t, delta_t);  h_t = Ab_t h_{t-1} + Bb_t x_t
//   y_t = C_t . h_t (+ d_skip * x_t when enabled)
// Differentiable through every projection and the recurrence.
Tensor s6_selective_scan(const Tensor& x, const S6Weights& w);

// The fused recurrence given precomputed projections; exposed for tests.
Tensor selective_scan_op(const Tensor& u, const Tensor& delta_pre, const Tensor& a_log,
                         const Tensor& b_seq, const Tensor& c_seq, const Tensor& d_skip,
                         bool use_d_skip);

// Recurrence-vs-convolution benchmark with an equivalence precheck.
struct ScanBenchRow {
    int64_t len = 0;
    double recurrence_sec = 0.0;
    double convolution_sec = 0.0;
    double max_equiv_err = 0.0;
};

struct ScanBenchResult {
    std::vector<ScanBenchRow> rows;
    double loglog_slope = 0.0;  // fit of log(recurrence time) vs log(L)
    double loglog_r2 = 0.0;
    double max_equiv_err = 0.0;
};

ScanBenchResult run_scan_bench(const std::vector<int64_t>& lengths, int64_t state, int64_t iters,
                               uint64_t seed);

}  // namespace dmamba
