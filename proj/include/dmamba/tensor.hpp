#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

#include "dmamba/common.hpp"

namespace dmamba {

// Dense row-major tensor of doubles with an optional gradient buffer.
// Tensor is a cheap handle (shared_ptr semantics): copies alias the same
// storage, which is what lets tape closures hold on to operands. Values are
// treated as immutable once an op has produced them; only grad accumulates.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
    int64_t rank() const { return static_cast<int64_t>(impl_->shape.size()); }
    int64_t extent(int64_t axis) const;

    std::vector<double>& data() const { return impl_->data; }
    std::vector<double>& grad() const;

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    const Tensor& set_requires_grad(bool value) const;
    void zero_grad() const;

    // Scalar access; throws ShapeError unless numel == 1.
    double item() const;
    double at(std::initializer_list<int64_t> idx) const;

    // Deep copy of values (and requires_grad flag; grad starts at zero).
    Tensor clone() const;

    // True if both handles point at the same storage.
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    struct Impl {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;  // allocated lazily, same numel as data
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;
};

// Records the backward rule of every executed op, in execution order. One
// tape per forward pass; activating a tape (construction) makes ops record
// onto it. Single-threaded by contract: a tape is confined to the thread
// that created it, and independent tapes never share tensors' grad buffers
// concurrently.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Every op registers its freshly created outputs alongside its rule so
    // backward() can reset intermediate grads between sweeps.
    void record(std::initializer_list<Tensor> outputs, std::function<void()> backward_fn);
    size_t size() const { return entries_.size(); }

    // Zeroes intermediate (op-output) grads, seeds d(loss)/d(loss) = 1 and
    // applies every recorded rule exactly once, newest first. Returns the
    // number of rule applications. Repeated calls accumulate into leaf grads.
    // Throws ShapeError for non-scalar loss and ValueError for an empty tape.
    size_t backward(const Tensor& loss);

    void clear() {
        entries_.clear();
        outputs_.clear();
    }

    static Tape* active();

private:
    std::vector<std::function<void()>> entries_;
    std::vector<Tensor> outputs_;
    Tape* previous_ = nullptr;
};

// Temporarily disables recording (forward-only evaluation).
struct NoGrad {
    NoGrad();
    ~NoGrad();
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

private:
    Tape* previous_;
};

namespace detail {
// True when an op should record a backward rule for these inputs.
bool tracked(std::initializer_list<const Tensor*> inputs);
// grad += contribution, elementwise.
void accumulate(const Tensor& t, std::span<const double> contribution);
// Throws NumericalError if debug checks are on and t has a non-finite value.
void check_finite(const Tensor& t, const char* op_name);
}  // namespace detail

}  // namespace dmamba
