#pragma once

#include "dmamba/tensor.hpp"

namespace dmamba {

// All ops allocate a fresh output and, when a tape is active and an input
// requires grad, record a reverse rule onto it. Binary ops require exactly
// matching shapes; the only broadcasts in the project are scalar-tensor
// (scale/add_scalar) and the bias add inside linear/conv.

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n] -> [m,n]

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor neg(const Tensor& x);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

enum class Reduce { sum, mean };
Tensor reduce(Reduce kind, const Tensor& x, const std::vector<int64_t>& axes);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Scalar helpers used outside the tape.
double sigmoid_scalar(double x);
double softplus_scalar(double x);

}  // namespace dmamba
