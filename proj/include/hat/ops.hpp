#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hat/tensor.hpp"

// Differentiable operations. Each op records a backward rule on the active
// tape when at least one input requires grad. There is no implicit
// broadcasting: every op documents the exact shapes it accepts.

HAT_NS_BEGIN

// While a monitor is alive on this thread, relu folds the sign pattern of
// every input it sees into signature(). Two evaluations with equal
// signatures took the same linear piece of every relu.
class KinkMonitor {
public:
    KinkMonitor();
    ~KinkMonitor();
    KinkMonitor(const KinkMonitor&) = delete;
    KinkMonitor& operator=(const KinkMonitor&) = delete;

    std::uint64_t signature() const { return hash_; }
    void fold(bool positive) { hash_ = (hash_ ^ (positive ? 0x9eu : 0x31u)) * 1099511628211ull; }

private:
    KinkMonitor* previous_;
    std::uint64_t hash_ = 1469598103934665603ull;
};

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, Scalar factor);
Tensor add_scalar(const Tensor& a, Scalar value);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
// Natural log; inputs must be positive.
Tensor log(const Tensor& a);

// Reductions to a rank-0 tensor.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m x n] -> [n x m]
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// x[m x n] + bias[n] added to every row.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
// x[C x H x W] + bias[C] added to every pixel of channel c.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

// Row-wise softmax of [m x n].
Tensor softmax_rows(const Tensor& x);
// Row-wise normalization of [m x n] with affine gamma[n], beta[n].
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps = Scalar(1e-5));

// Row/column stacking and slicing of rank-2 tensors.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::int64_t start, std::int64_t count);
Tensor slice_cols(const Tensor& x, std::int64_t start, std::int64_t count);

// Cross-correlation of input[C_in x H x W] with weight[C_out x C_in x k x k].
// Output is [C_out x H' x W'] with H' = (H + 2p - k) / stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int padding);

// Bilinear upsampling of [C x H x W] by an integer factor. Sample positions use
// the half-pixel convention: output pixel o reads source coordinate
// (o + 0.5) / factor - 0.5, clamped to [0, size - 1].
Tensor bilinear_upsample(const Tensor& x, int factor);

// [C x H x W] -> [(H*W) x C], row-major over (H, W).
Tensor channels_to_tokens(const Tensor& x);

struct PixelIndex {
    int row = 0;
    int col = 0;
    bool operator==(const PixelIndex&) const = default;
};

// Feature vectors of x[C x H x W] at the given pixels -> [k x C].
Tensor gather_pixels(const Tensor& x, std::span<const PixelIndex> pixels);

HAT_NS_END
