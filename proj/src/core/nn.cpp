#include "hat/nn.hpp"

#include <cmath>

#include "hat/errors.hpp"

HAT_NS_BEGIN

Tensor uniform_parameter(Shape shape, std::int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<Scalar> values(static_cast<std::size_t>(numel(shape)));
    for (auto& v : values) v = static_cast<Scalar>(rng.uniform(-bound, bound));
    return Tensor(std::move(shape), std::move(values), true);
}

Linear::Linear(std::int64_t in_features, std::int64_t out_features, Rng& rng, bool with_bias)
    : weight(uniform_parameter({in_features, out_features}, in_features, rng)) {
    if (with_bias) bias = Tensor::zeros({out_features}, true);
}

Tensor Linear::forward(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return bias.defined() ? add_row_bias(y, bias) : y;
}

void Linear::collect(const std::string& prefix, NamedParameters& out) const {
    out.emplace_back(prefix + ".weight", weight);
    if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

Conv2d::Conv2d(std::int64_t in_channels, std::int64_t out_channels, int kernel, int stride_, int padding_, Rng& rng)
    : weight(uniform_parameter({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng)),
      bias(Tensor::zeros({out_channels}, true)),
      stride(stride_),
      padding(padding_) {}

Tensor Conv2d::forward(const Tensor& x) const { return add_channel_bias(conv2d(x, weight, stride, padding), bias); }

void Conv2d::collect(const std::string& prefix, NamedParameters& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

LayerNorm::LayerNorm(std::int64_t dim) : gamma(Tensor::full({dim}, 1, true)), beta(Tensor::zeros({dim}, true)) {}

void LayerNorm::collect(const std::string& prefix, NamedParameters& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
}

FeedForward::FeedForward(std::int64_t dim, std::int64_t hidden, Rng& rng)
    : first(dim, hidden, rng), second(hidden, dim, rng) {}

void FeedForward::collect(const std::string& prefix, NamedParameters& out) const {
    first.collect(prefix + ".0", out);
    second.collect(prefix + ".1", out);
}

AttentionOutput scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw DimensionError("attention: inputs must be rank 2");
    const auto dim = q.dim(1);
    if (heads < 1 || dim % heads != 0) {
        throw ConfigError("attention: channel width " + std::to_string(dim) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (k.dim(1) != dim || v.dim(1) != dim || k.dim(0) != v.dim(0)) {
        throw DimensionError("attention: key/value shapes " + shape_string(k.shape()) + ", " +
                             shape_string(v.shape()) + " incompatible with query " + shape_string(q.shape()));
    }
    const auto head_dim = dim / heads;
    const auto nq = q.dim(0), nk = k.dim(0);
    const auto inv_sqrt_d = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(head_dim)));

    std::vector<Tensor> head_outputs;
    std::vector<Scalar> weights;
    weights.reserve(static_cast<std::size_t>(heads * nq * nk));
    for (int h = 0; h < heads; ++h) {
        const Tensor qh = slice_cols(q, h * head_dim, head_dim);
        const Tensor kh = slice_cols(k, h * head_dim, head_dim);
        const Tensor vh = slice_cols(v, h * head_dim, head_dim);
        const Tensor attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt_d));
        weights.insert(weights.end(), attn.values().begin(), attn.values().end());
        head_outputs.push_back(matmul(attn, vh));
    }
    return {concat_cols(head_outputs), Tensor({heads, nq, nk}, std::move(weights))};
}

MultiHeadAttention::MultiHeadAttention(std::int64_t dim, int heads_, Rng& rng)
    : heads(heads_), query(dim, dim, rng), key(dim, dim, rng, false), value(dim, dim, rng), output(dim, dim, rng) {
    if (heads < 1 || dim % heads != 0) {
        throw ConfigError("multi-head attention: channel width " + std::to_string(dim) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
}

AttentionOutput MultiHeadAttention::forward(const Tensor& q, const Tensor& k, const Tensor& v) const {
    auto attended = scaled_dot_product_attention(query.forward(q), key.forward(k), value.forward(v), heads);
    return {output.forward(attended.output), std::move(attended.weights)};
}

void MultiHeadAttention::collect(const std::string& prefix, NamedParameters& out) const {
    query.collect(prefix + ".q", out);
    key.collect(prefix + ".k", out);
    value.collect(prefix + ".v", out);
    output.collect(prefix + ".o", out);
}

HAT_NS_END
