#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>

namespace dmamba::fastmath {

// Inline exp for the scan kernels: Cody-Waite range reduction to
// r in [-ln2/2, ln2/2], degree-11 Taylor polynomial (|rel err| < 1e-14 over
// the reduced range), exponent reassembly through the double's bit layout.
// About 3x faster than the libm call in the selective-scan inner loop and
// accurate enough for the 1e-10/1e-12 equivalence tolerances used in tests.
inline double exp(double x) {
    constexpr double kLog2e = 1.4426950408889634074;
    constexpr double kLn2Hi = 6.93147180369123816490e-01;
    constexpr double kLn2Lo = 1.90821492927058770002e-10;
    constexpr double kRoundMagic = 6755399441055744.0;  // 1.5 * 2^52
    if (x > 709.0) return std::numeric_limits<double>::infinity();
    if (x < -708.0) return 0.0;  // flush to zero below the normal range
    // Round-to-nearest integer without touching the FP environment: adding
    // 1.5*2^52 leaves the integer in the low mantissa bits.
    const double shifted = x * kLog2e + kRoundMagic;
    const double kd = shifted - kRoundMagic;
    const double r = (x - kd * kLn2Hi) - kd * kLn2Lo;
    double p = 1.0 / 39916800.0;  // 1/11!
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    const int64_t k = static_cast<int32_t>(std::bit_cast<uint64_t>(shifted) & 0xFFFFFFFFu);
    const uint64_t scale_bits = static_cast<uint64_t>(k + 1023) << 52;
    return p * std::bit_cast<double>(scale_bits);
}

}  // namespace dmamba::fastmath
