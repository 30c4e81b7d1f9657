#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hat/precision.hpp"

HAT_NS_BEGIN

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct TensorImpl {
    Shape shape;
    std::vector<Scalar> data;
    std::vector<Scalar> grad;  // empty until the first accumulation
    bool requires_grad = false;
    bool leaf = true;
};

// Dense row-major array. Copies share storage; values are immutable after
// construction except through values_for_update(), which is reserved for the
// optimizer and the finite-difference checker.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
    static Tensor scalar(Scalar value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::int64_t dim(std::size_t axis) const;
    std::size_t size() const;

    std::span<const Scalar> values() const;
    Scalar operator[](std::size_t flat_index) const { return impl_->data[flat_index]; }
    Scalar item() const;

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    bool is_leaf() const { return !impl_ || impl_->leaf; }
    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    // Accumulated gradient; zeros if nothing has been accumulated yet.
    std::vector<Scalar> grad() const;
    void zero_grad();

    std::span<Scalar> values_for_update();
    std::span<Scalar> grad_for_update();

    Tensor detached() const;
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    // Gradient buffer of this tensor, allocated (zeroed) on first use.
    std::vector<Scalar>& grad_buffer() const;
    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Ordered record of differentiable operations. Entries are appended in
// execution order, so every entry's inputs precede it.
class Tape {
public:
    // Receives the gradient of the entry's output and accumulates into inputs.
    using BackwardFn = std::function<void(std::span<const Scalar> grad_output)>;

    void record(const Tensor& output, std::vector<Tensor> inputs, BackwardFn fn);
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    void clear() { entries_.clear(); }

    // Every non-leaf input of every entry is the output of an earlier entry.
    bool is_topologically_ordered() const;

private:
    friend void backward(const Tensor& loss, Tape& tape);

    struct Entry {
        std::shared_ptr<TensorImpl> output;
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        BackwardFn fn;
    };
    std::vector<Entry> entries_;
};

// Tape that operations on this thread record onto, or nullptr.
Tape* active_tape();

// Makes a tape active on the current thread for the scope's lifetime.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

// Reverse-mode accumulation of d(loss)/d(x) into every requires_grad leaf.
// Gradients add onto existing buffers; the tape is cleared afterwards.
void backward(const Tensor& loss, Tape& tape);

HAT_NS_END
