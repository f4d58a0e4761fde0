#include "dmamba/tensor.hpp"

#include <cmath>

namespace dmamba {

namespace {
bool g_debug_checks = false;
thread_local Tape* g_active_tape = nullptr;
}  // namespace

void set_debug_checks(bool enabled) { g_debug_checks = enabled; }
bool debug_checks() { return g_debug_checks; }

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape));
    }
    impl_ = std::make_shared<Impl>();
    impl_->shape = std::move(shape);
    impl_->data.assign(static_cast<size_t>(shape_numel(impl_->shape)), fill);
    if (requires_grad) set_requires_grad(true);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not fill shape " + shape_to_string(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    if (requires_grad) t.set_requires_grad(true);
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

int64_t Tensor::extent(int64_t axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                         shape_to_string(shape()));
    }
    return impl_->shape[static_cast<size_t>(axis)];
}

std::vector<double>& Tensor::grad() const {
    if (!impl_->requires_grad) throw ValueError("tensor does not require grad");
    if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

const Tensor& Tensor::set_requires_grad(bool value) const {
    impl_->requires_grad = value;
    if (value && impl_->grad.size() != impl_->data.size()) {
        impl_->grad.assign(impl_->data.size(), 0.0);
    }
    return *this;
}

void Tensor::zero_grad() const {
    if (impl_->requires_grad) impl_->grad.assign(impl_->data.size(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() requires a scalar, got " + shape_to_string(shape()));
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    if (static_cast<int64_t>(idx.size()) != rank()) {
        throw ShapeError("index rank mismatch for " + shape_to_string(shape()));
    }
    int64_t flat = 0;
    auto it = idx.begin();
    for (size_t k = 0; k < impl_->shape.size(); ++k, ++it) {
        if (*it < 0 || *it >= impl_->shape[k]) throw ShapeError("index out of bounds");
        flat = flat * impl_->shape[k] + *it;
    }
    return impl_->data[static_cast<size_t>(flat)];
}

Tensor Tensor::clone() const {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    if (impl_->requires_grad) t.set_requires_grad(true);
    return t;
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::initializer_list<Tensor> outputs, std::function<void()> backward_fn) {
    for (const Tensor& t : outputs) outputs_.push_back(t);
    entries_.push_back(std::move(backward_fn));
}

size_t Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward() requires a scalar loss, got " + shape_to_string(loss.shape()));
    }
    if (entries_.empty()) throw ValueError("backward() on an empty tape");
    if (!loss.requires_grad()) throw ValueError("loss does not require grad; nothing to differentiate");
    for (const Tensor& t : outputs_) t.zero_grad();
    loss.grad()[0] += 1.0;
    size_t applied = 0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        (*it)();
        ++applied;
    }
    return applied;
}

NoGrad::NoGrad() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGrad::~NoGrad() { g_active_tape = previous_; }

namespace detail {

bool tracked(std::initializer_list<const Tensor*> inputs) {
    if (Tape::active() == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

void accumulate(const Tensor& t, std::span<const double> contribution) {
    auto& g = t.grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
}

void check_finite(const Tensor& t, const char* op_name) {
    if (!debug_checks()) return;
    for (double v : t.data()) {
        if (!std::isfinite(v)) {
            throw NumericalError(std::string("non-finite value produced by ") + op_name);
        }
    }
}

}  // namespace detail
}  // namespace dmamba
