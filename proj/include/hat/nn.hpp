#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hat/ops.hpp"
#include "hat/rng.hpp"

HAT_NS_BEGIN

using NamedParameters = std::vector<std::pair<std::string, Tensor>>;

// Parameter filled from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_parameter(Shape shape, std::int64_t fan_in, Rng& rng);

class Linear {
public:
    Linear() = default;
    Linear(std::int64_t in_features, std::int64_t out_features, Rng& rng, bool with_bias = true);

    // x[m x in] -> [m x out]
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParameters& out) const;

    Tensor weight;  // [in x out]
    Tensor bias;    // [out], undefined when built without bias
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::int64_t in_channels, std::int64_t out_channels, int kernel, int stride, int padding, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParameters& out) const;

    Tensor weight;  // [out x in x k x k]
    Tensor bias;    // [out]
    int stride = 1;
    int padding = 0;
};

class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(std::int64_t dim);

    Tensor forward(const Tensor& x) const { return layer_norm_rows(x, gamma, beta); }
    void collect(const std::string& prefix, NamedParameters& out) const;

    Tensor gamma;
    Tensor beta;
};

// Two linear layers with a rectifier in between.
class FeedForward {
public:
    FeedForward() = default;
    FeedForward(std::int64_t dim, std::int64_t hidden, Rng& rng);

    Tensor forward(const Tensor& x) const { return second.forward(relu(first.forward(x))); }
    void collect(const std::string& prefix, NamedParameters& out) const;

    Linear first;
    Linear second;
};

struct AttentionOutput {
    Tensor output;   // [n_q x C]
    Tensor weights;  // [heads x n_q x n_k], detached; each row sums to 1
};

// softmax(Q_h K_h^T / sqrt(d)) V_h per head over already-projected inputs,
// heads concatenated along columns.
AttentionOutput scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(std::int64_t dim, int heads, Rng& rng);

    // q[n_q x C], k/v[n_k x C] -> output[n_q x C] after the output projection.
    AttentionOutput forward(const Tensor& q, const Tensor& k, const Tensor& v) const;
    void collect(const std::string& prefix, NamedParameters& out) const;

    int heads = 1;
    Linear query;
    Linear key;  // no bias
    Linear value;
    Linear output;
};

HAT_NS_END
