#include "hat/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "hat/errors.hpp"

HAT_NS_BEGIN

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad) {
    for (auto d : shape) {
        if (d < 0) throw DimensionError("negative dimension in shape " + shape_string(shape));
    }
    if (static_cast<std::size_t>(numel(shape)) != data.size()) {
        throw DimensionError("shape " + shape_string(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
    }
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0, requires_grad); }

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
    const auto n = static_cast<std::size_t>(numel(shape));
    return Tensor(std::move(shape), std::vector<Scalar>(n, value), requires_grad);
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
    static const Shape empty;
    return impl_ ? impl_->shape : empty;
}

std::int64_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) throw DimensionError("axis out of range for shape " + shape_string(shape()));
    return impl_->shape[axis];
}

std::size_t Tensor::size() const { return impl_ ? impl_->data.size() : 0; }

std::span<const Scalar> Tensor::values() const {
    if (!impl_) return {};
    return impl_->data;
}

Scalar Tensor::item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    return impl_->data[0];
}

std::vector<Scalar> Tensor::grad() const {
    if (!impl_) return {};
    if (impl_->grad.empty()) return std::vector<Scalar>(impl_->data.size(), 0);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.clear();
}

std::span<Scalar> Tensor::values_for_update() { return impl_->data; }

std::span<Scalar> Tensor::grad_for_update() { return grad_buffer(); }

Tensor Tensor::detached() const {
    if (!impl_) return {};
    return Tensor(impl_->shape, impl_->data, false);
}

std::vector<Scalar>& Tensor::grad_buffer() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0);
    return impl_->grad;
}

void Tape::record(const Tensor& output, std::vector<Tensor> inputs, BackwardFn fn) {
    Entry e;
    e.output = output.impl();
    e.output->leaf = false;
    e.output->requires_grad = true;
    e.inputs.reserve(inputs.size());
    for (auto& t : inputs) e.inputs.push_back(t.impl());
    e.fn = std::move(fn);
    entries_.push_back(std::move(e));
}

bool Tape::is_topologically_ordered() const {
    std::unordered_set<const TensorImpl*> produced;
    for (const auto& e : entries_) {
        for (const auto& in : e.inputs) {
            if (!in->leaf && !produced.count(in.get())) return false;
        }
        produced.insert(e.output.get());
    }
    return true;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

void backward(const Tensor& loss, Tape& tape) {
    if (!loss.defined() || loss.size() != 1) {
        throw ArgumentError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw ArgumentError("backward: loss is not connected to any tensor that requires grad");
    }
    loss.grad_buffer()[0] += 1;
    for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
        auto& out = *it->output;
        if (out.grad.empty()) continue;  // not reachable from the loss
        it->fn(out.grad);
        // Intermediate gradients are not retained past their use.
        if (it->output.get() != loss.impl().get()) {
            out.grad.clear();
            out.grad.shrink_to_fit();
        }
    }
    tape.clear();
}

HAT_NS_END
