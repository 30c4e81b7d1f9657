#include "hat/ops.hpp"

#include <algorithm>
#include <cmath>

#include "hat/errors.hpp"

HAT_NS_BEGIN

namespace {

// Tape to record on, or nullptr when no input needs a gradient.
Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
    Tape* tape = active_tape();
    if (!tape) return nullptr;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return tape;
    }
    return nullptr;
}

Tape* recording_tape(std::span<const Tensor> inputs) {
    Tape* tape = active_tape();
    if (!tape) return nullptr;
    for (const auto& t : inputs) {
        if (t.requires_grad()) return tape;
    }
    return nullptr;
}

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ArgumentError(std::string(op) + ": undefined tensor");
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    require_defined(t, op);
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                             shape_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require_defined(a, op);
    require_defined(b, op);
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}

template <typename Fn>
Tensor unary(const Tensor& a, const char* name, Fn&& fn, Tape::BackwardFn (*make_bw)(const Tensor&, const Tensor&)) {
    require_defined(a, name);
    std::vector<Scalar> out(a.size());
    auto in = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(in[i]);
    Tensor result(a.shape(), std::move(out));
    if (Tape* tape = recording_tape({&a})) tape->record(result, {a}, make_bw(a, result));
    return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<Scalar> out(a.size());
    auto x = a.values(), y = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    Tensor result(a.shape(), std::move(out));
    if (Tape* tape = recording_tape({&a, &b})) {
        tape->record(result, {a, b}, [a, b](std::span<const Scalar> g) {
            for (const Tensor* t : {&a, &b}) {
                if (!t->requires_grad()) continue;
                auto& ga = t->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
        });
    }
    return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<Scalar> out(a.size());
    auto x = a.values(), y = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    Tensor result(a.shape(), std::move(out));
    if (Tape* tape = recording_tape({&a, &b})) {
        tape->record(result, {a, b}, [a, b](std::span<const Scalar> g) {
            if (a.requires_grad()) {
                auto& ga = a.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<Scalar> out(a.size());
    auto x = a.values(), y = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    Tensor result(a.shape(), std::move(out));
    if (Tape* tape = recording_tape({&a, &b})) {
        tape->record(result, {a, b}, [a, b](std::span<const Scalar> g) {
            auto x = a.values(), y = b.values();
            if (a.requires_grad()) {
                auto& ga = a.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
            }
        });
    }
    return result;
}

Tensor scale(const Tensor& a, Scalar factor) {
    require_defined(a, "scale");
    std::vector<Scalar> out(a.size());
    auto x = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
    Tensor result(a.shape(), std::move(out));
    if (Tape* tape = recording_tape({&a})) {
        tape->record(result, {a}, [a, factor](std::span<const Scalar> g) {
            auto& ga = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
        });
    }
    return result;
}

Tensor add_scalar(const Tensor& a, Scalar value) {
    require_defined(a, "add_scalar");
    std::vector<Scalar> out(a.size());
    auto x = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + value;
    Tensor result(a.shape(), std::move(out));
    if (Tape* tape = recording_tape({&a})) {
        tape->record(result, {a}, [a](std::span<const Scalar> g) {
            auto& ga = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return result;
}

namespace {
thread_local KinkMonitor* g_kink_monitor = nullptr;
}

KinkMonitor::KinkMonitor() : previous_(g_kink_monitor) { g_kink_monitor = this; }

KinkMonitor::~KinkMonitor() { g_kink_monitor = previous_; }

Tensor relu(const Tensor& a) {
    if (g_kink_monitor) {
        for (Scalar v : a.values()) g_kink_monitor->fold(v > 0);
    }
    return unary(
        a, "relu", [](Scalar v) { return v > 0 ? v : Scalar(0); },
        [](const Tensor& in, const Tensor&) -> Tape::BackwardFn {
            return [in](std::span<const Scalar> g) {
                auto x = in.values();
                auto& ga = in.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (x[i] > 0) ga[i] += g[i];
                }
            };
        });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        a, "sigmoid",
        [](Scalar v) {
            // Branches keep exp() from overflowing for large |v|.
            if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
            const Scalar e = std::exp(v);
            return e / (Scalar(1) + e);
        },
        [](const Tensor& in, const Tensor& out) -> Tape::BackwardFn {
            auto y = out.impl();
            return [in, y](std::span<const Scalar> g) {
                auto& ga = in.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y->data[i] * (Scalar(1) - y->data[i]);
            };
        });
}

Tensor exp(const Tensor& a) {
    return unary(
        a, "exp", [](Scalar v) { return std::exp(v); },
        [](const Tensor& in, const Tensor& out) -> Tape::BackwardFn {
            auto y = out.impl();
            return [in, y](std::span<const Scalar> g) {
                auto& ga = in.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y->data[i];
            };
        });
}

Tensor log(const Tensor& a) {
    require_defined(a, "log");
    for (Scalar v : a.values()) {
        if (!(v > 0)) throw ArgumentError("log: non-positive input");
    }
    return unary(
        a, "log", [](Scalar v) { return std::log(v); },
        [](const Tensor& in, const Tensor&) -> Tape::BackwardFn {
            return [in](std::span<const Scalar> g) {
                auto x = in.values();
                auto& ga = in.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
            };
        });
}

Tensor sum(const Tensor& a) {
    require_defined(a, "sum");
    double total = 0;
    for (Scalar v : a.values()) total += v;
    Tensor result = Tensor::scalar(static_cast<Scalar>(total));
    if (Tape* tape = recording_tape({&a})) {
        tape->record(result, {a}, [a](std::span<const Scalar> g) {
            auto& ga = a.grad_buffer();
            for (auto& v : ga) v += g[0];
        });
    }
    return result;
}

Tensor mean(const Tensor& a) {
    require_defined(a, "mean");
    if (a.size() == 0) throw DimensionError("mean of empty tensor");
    return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.size()));
}

namespace {

// c[m x n] += a[m x k] * b[k x n], accumulated in double.
void gemm_nn(const Scalar* a, const Scalar* b, Scalar* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    std::vector<double> row(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < m; ++i) {
        std::fill(row.begin(), row.end(), 0.0);
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0) continue;
            const Scalar* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
        for (std::int64_t j = 0; j < n; ++j) c[i * n + j] += static_cast<Scalar>(row[j]);
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    }
    std::vector<Scalar> out(static_cast<std::size_t>(m * n), 0);
    gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
    Tensor result({m, n}, std::move(out));
    if (Tape* tape = recording_tape({&a, &b})) {
        tape->record(result, {a, b}, [a, b, m, k, n](std::span<const Scalar> g) {
            auto x = a.values(), y = b.values();
            if (a.requires_grad()) {
                // dA = G * B^T
                auto& ga = a.grad_buffer();
                for (std::int64_t i = 0; i < m; ++i) {
                    for (std::int64_t p = 0; p < k; ++p) {
                        double acc = 0;
                        for (std::int64_t j = 0; j < n; ++j) acc += double(g[i * n + j]) * y[p * n + j];
                        ga[i * k + p] += static_cast<Scalar>(acc);
                    }
                }
            }
            if (b.requires_grad()) {
                // dB = A^T * G
                auto& gb = b.grad_buffer();
                std::vector<double> acc(static_cast<std::size_t>(k * n), 0.0);
                for (std::int64_t i = 0; i < m; ++i) {
                    for (std::int64_t p = 0; p < k; ++p) {
                        const double av = x[i * k + p];
                        if (av == 0) continue;
                        for (std::int64_t j = 0; j < n; ++j) acc[p * n + j] += av * g[i * n + j];
                    }
                }
                for (std::size_t i = 0; i < acc.size(); ++i) gb[i] += static_cast<Scalar>(acc[i]);
            }
        });
    }
    return result;
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const auto m = a.dim(0), n = a.dim(1);
    std::vector<Scalar> out(a.size());
    auto x = a.values();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
    Tensor result({n, m}, std::move(out));
    if (Tape* tape = recording_tape({&a})) {
        tape->record(result, {a}, [a, m, n](std::span<const Scalar> g) {
            auto& ga = a.grad_buffer();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
        });
    }
    return result;
}

Tensor reshape(const Tensor& a, Shape shape) {
    require_defined(a, "reshape");
    if (numel(shape) != static_cast<std::int64_t>(a.size())) {
        throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
    }
    Tensor result(std::move(shape), std::vector<Scalar>(a.values().begin(), a.values().end()));
    if (Tape* tape = recording_tape({&a})) {
        tape->record(result, {a}, [a](std::span<const Scalar> g) {
            auto& ga = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return result;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
    require_rank(x, 2, "add_row_bias");
    require_rank(bias, 1, "add_row_bias");
    const auto m = x.dim(0), n = x.dim(1);
    if (bias.dim(0) != n) throw DimensionError("add_row_bias: bias length " + std::to_string(bias.dim(0)) +
                                               " vs row width " + std::to_string(n));
    std::vector<Scalar> out(x.values().begin(), x.values().end());
    auto b = bias.values();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out[i * n + j] += b[j];
    Tensor result(x.shape(), std::move(out));
    if (Tape* tape = recording_tape({&x, &bias})) {
        tape->record(result, {x, bias}, [x, bias, m, n](std::span<const Scalar> g) {
            if (x.requires_grad()) {
                auto& gx = x.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (bias.requires_grad()) {
                auto& gb = bias.grad_buffer();
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
        });
    }
    return result;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    require_rank(x, 3, "add_channel_bias");
    require_rank(bias, 1, "add_channel_bias");
    const auto c = x.dim(0), plane = x.dim(1) * x.dim(2);
    if (bias.dim(0) != c) throw DimensionError("add_channel_bias: bias length mismatch");
    std::vector<Scalar> out(x.values().begin(), x.values().end());
    auto b = bias.values();
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < plane; ++i) out[ch * plane + i] += b[ch];
    Tensor result(x.shape(), std::move(out));
    if (Tape* tape = recording_tape({&x, &bias})) {
        tape->record(result, {x, bias}, [x, bias, c, plane](std::span<const Scalar> g) {
            if (x.requires_grad()) {
                auto& gx = x.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (bias.requires_grad()) {
                auto& gb = bias.grad_buffer();
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    double acc = 0;
                    for (std::int64_t i = 0; i < plane; ++i) acc += g[ch * plane + i];
                    gb[ch] += static_cast<Scalar>(acc);
                }
            }
        });
    }
    return result;
}

Tensor softmax_rows(const Tensor& x) {
    require_rank(x, 2, "softmax_rows");
    const auto m = x.dim(0), n = x.dim(1);
    std::vector<Scalar> out(x.size());
    auto v = x.values();
    for (std::int64_t i = 0; i < m; ++i) {
        const Scalar* row = v.data() + i * n;
        const Scalar mx = *std::max_element(row, row + n);
        double z = 0;
        for (std::int64_t j = 0; j < n; ++j) z += std::exp(double(row[j]) - mx);
        for (std::int64_t j = 0; j < n; ++j) out[i * n + j] = static_cast<Scalar>(std::exp(double(row[j]) - mx) / z);
    }
    Tensor result(x.shape(), std::move(out));
    if (Tape* tape = recording_tape({&x})) {
        auto y = result.impl();
        tape->record(result, {x}, [x, y, m, n](std::span<const Scalar> g) {
            auto& gx = x.grad_buffer();
            for (std::int64_t i = 0; i < m; ++i) {
                double dot = 0;
                for (std::int64_t j = 0; j < n; ++j) dot += double(g[i * n + j]) * y->data[i * n + j];
                for (std::int64_t j = 0; j < n; ++j) {
                    gx[i * n + j] += static_cast<Scalar>(y->data[i * n + j] * (g[i * n + j] - dot));
                }
            }
        });
    }
    return result;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps) {
    require_rank(x, 2, "layer_norm_rows");
    require_rank(gamma, 1, "layer_norm_rows");
    require_rank(beta, 1, "layer_norm_rows");
    const auto m = x.dim(0), n = x.dim(1);
    if (gamma.dim(0) != n || beta.dim(0) != n) throw DimensionError("layer_norm_rows: affine size mismatch");
    std::vector<Scalar> normalized(x.size()), out(x.size());
    std::vector<Scalar> inv_std(static_cast<std::size_t>(m));
    auto v = x.values(), gm = gamma.values(), bt = beta.values();
    for (std::int64_t i = 0; i < m; ++i) {
        double mu = 0;
        for (std::int64_t j = 0; j < n; ++j) mu += v[i * n + j];
        mu /= double(n);
        double var = 0;
        for (std::int64_t j = 0; j < n; ++j) var += (v[i * n + j] - mu) * (v[i * n + j] - mu);
        var /= double(n);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = static_cast<Scalar>(is);
        for (std::int64_t j = 0; j < n; ++j) {
            const auto xh = static_cast<Scalar>((v[i * n + j] - mu) * is);
            normalized[i * n + j] = xh;
            out[i * n + j] = xh * gm[j] + bt[j];
        }
    }
    Tensor result(x.shape(), std::move(out));
    if (Tape* tape = recording_tape({&x, &gamma, &beta})) {
        tape->record(result, {x, gamma, beta},
                     [x, gamma, beta, m, n, xhat = std::move(normalized), inv_std = std::move(inv_std)](
                         std::span<const Scalar> g) {
                         auto gm = gamma.values();
                         if (gamma.requires_grad() || beta.requires_grad()) {
                             std::vector<double> dg(n, 0.0), db(n, 0.0);
                             for (std::int64_t i = 0; i < m; ++i)
                                 for (std::int64_t j = 0; j < n; ++j) {
                                     dg[j] += double(g[i * n + j]) * xhat[i * n + j];
                                     db[j] += g[i * n + j];
                                 }
                             if (gamma.requires_grad()) {
                                 auto& gg = gamma.grad_buffer();
                                 for (std::int64_t j = 0; j < n; ++j) gg[j] += static_cast<Scalar>(dg[j]);
                             }
                             if (beta.requires_grad()) {
                                 auto& gb = beta.grad_buffer();
                                 for (std::int64_t j = 0; j < n; ++j) gb[j] += static_cast<Scalar>(db[j]);
                             }
                         }
                         if (x.requires_grad()) {
                             auto& gx = x.grad_buffer();
                             for (std::int64_t i = 0; i < m; ++i) {
                                 double mean_dxh = 0, mean_dxh_xh = 0;
                                 for (std::int64_t j = 0; j < n; ++j) {
                                     const double dxh = double(g[i * n + j]) * gm[j];
                                     mean_dxh += dxh;
                                     mean_dxh_xh += dxh * xhat[i * n + j];
                                 }
                                 mean_dxh /= double(n);
                                 mean_dxh_xh /= double(n);
                                 for (std::int64_t j = 0; j < n; ++j) {
                                     const double dxh = double(g[i * n + j]) * gm[j];
                                     gx[i * n + j] += static_cast<Scalar>(
                                         inv_std[i] * (dxh - mean_dxh - xhat[i * n + j] * mean_dxh_xh));
                                 }
                             }
                         }
                     });
    }
    return result;
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ArgumentError("concat_rows: no inputs");
    const auto n = parts[0].rank() == 2 ? parts[0].dim(1) : -1;
    std::int64_t rows = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_rows");
        if (p.dim(1) != n) throw DimensionError("concat_rows: column count mismatch");
        rows += p.dim(0);
    }
    std::vector<Scalar> out;
    out.reserve(static_cast<std::size_t>(rows * n));
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    Tensor result({rows, n}, std::move(out));
    if (Tape* tape = recording_tape(parts)) {
        std::vector<Tensor> inputs(parts.begin(), parts.end());
        tape->record(result, inputs, [inputs](std::span<const Scalar> g) {
            std::size_t offset = 0;
            for (const auto& p : inputs) {
                if (p.requires_grad()) {
                    auto& gp = p.grad_buffer();
                    for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g[offset + i];
                }
                offset += p.size();
            }
        });
    }
    return result;
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
    const auto m = parts[0].rank() == 2 ? parts[0].dim(0) : -1;
    std::int64_t cols = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_cols");
        if (p.dim(0) != m) throw DimensionError("concat_cols: row count mismatch");
        cols += p.dim(1);
    }
    std::vector<Scalar> out(static_cast<std::size_t>(m * cols));
    std::int64_t c0 = 0;
    for (const auto& p : parts) {
        const auto w = p.dim(1);
        auto v = p.values();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < w; ++j) out[i * cols + c0 + j] = v[i * w + j];
        c0 += w;
    }
    Tensor result({m, cols}, std::move(out));
    if (Tape* tape = recording_tape(parts)) {
        std::vector<Tensor> inputs(parts.begin(), parts.end());
        tape->record(result, inputs, [inputs, m, cols](std::span<const Scalar> g) {
            std::int64_t c0 = 0;
            for (const auto& p : inputs) {
                const auto w = p.dim(1);
                if (p.requires_grad()) {
                    auto& gp = p.grad_buffer();
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < w; ++j) gp[i * w + j] += g[i * cols + c0 + j];
                }
                c0 += w;
            }
        });
    }
    return result;
}

Tensor slice_rows(const Tensor& x, std::int64_t start, std::int64_t count) {
    require_rank(x, 2, "slice_rows");
    const auto n = x.dim(1);
    if (start < 0 || count < 0 || start + count > x.dim(0)) throw DimensionError("slice_rows: range out of bounds");
    auto v = x.values();
    std::vector<Scalar> out(v.begin() + start * n, v.begin() + (start + count) * n);
    Tensor result({count, n}, std::move(out));
    if (Tape* tape = recording_tape({&x})) {
        tape->record(result, {x}, [x, start, n](std::span<const Scalar> g) {
            auto& gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[start * n + i] += g[i];
        });
    }
    return result;
}

Tensor slice_cols(const Tensor& x, std::int64_t start, std::int64_t count) {
    require_rank(x, 2, "slice_cols");
    const auto m = x.dim(0), n = x.dim(1);
    if (start < 0 || count < 0 || start + count > n) throw DimensionError("slice_cols: range out of bounds");
    auto v = x.values();
    std::vector<Scalar> out(static_cast<std::size_t>(m * count));
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < count; ++j) out[i * count + j] = v[i * n + start + j];
    Tensor result({m, count}, std::move(out));
    if (Tape* tape = recording_tape({&x})) {
        tape->record(result, {x}, [x, start, m, n, count](std::span<const Scalar> g) {
            auto& gx = x.grad_buffer();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < count; ++j) gx[i * n + start + j] += g[i * count + j];
        });
    }
    return result;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int padding) {
    require_rank(input, 3, "conv2d");
    require_rank(weight, 4, "conv2d");
    const auto cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const auto cout = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != cin) throw DimensionError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                                                   " input channels, got " + std::to_string(cin));
    if (weight.dim(3) != k || k % 2 == 0) throw DimensionError("conv2d: kernel must be square with odd size");
    if (stride < 1 || padding < 0) throw ArgumentError("conv2d: stride must be >= 1 and padding >= 0");
    if (k > h + 2 * padding || k > w + 2 * padding) {
        throw DimensionError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                             shape_string(input.shape()));
    }
    const std::int64_t oh = (h + 2 * padding - k) / stride + 1;
    const std::int64_t ow = (w + 2 * padding - k) / stride + 1;
    std::vector<Scalar> out(static_cast<std::size_t>(cout * oh * ow), 0);
    auto x = input.values(), wt = weight.values();

    // Valid output range along one axis for kernel tap t.
    auto valid = [stride, padding](std::int64_t t, std::int64_t in_size, std::int64_t out_size) {
        std::int64_t lo = 0;
        while (lo < out_size && lo * stride - padding + t < 0) ++lo;
        std::int64_t hi = out_size;
        while (hi > lo && (hi - 1) * stride - padding + t >= in_size) --hi;
        return std::pair{lo, hi};
    };

    for (std::int64_t co = 0; co < cout; ++co) {
        Scalar* o = out.data() + co * oh * ow;
        for (std::int64_t ci = 0; ci < cin; ++ci) {
            const Scalar* xi = x.data() + ci * h * w;
            for (std::int64_t ky = 0; ky < k; ++ky) {
                auto [y0, y1] = valid(ky, h, oh);
                for (std::int64_t kx = 0; kx < k; ++kx) {
                    const Scalar wv = wt[((co * cin + ci) * k + ky) * k + kx];
                    auto [x0, x1] = valid(kx, w, ow);
                    for (std::int64_t oy = y0; oy < y1; ++oy) {
                        const Scalar* row = xi + (oy * stride - padding + ky) * w - padding + kx;
                        Scalar* orow = o + oy * ow;
                        for (std::int64_t ox = x0; ox < x1; ++ox) orow[ox] += wv * row[ox * stride];
                    }
                }
            }
        }
    }
    Tensor result({cout, oh, ow}, std::move(out));
    if (Tape* tape = recording_tape({&input, &weight})) {
        tape->record(result, {input, weight}, [=](std::span<const Scalar> g) {
            auto x = input.values(), wt = weight.values();
            Scalar* gx = input.requires_grad() ? input.grad_buffer().data() : nullptr;
            Scalar* gw = weight.requires_grad() ? weight.grad_buffer().data() : nullptr;
            for (std::int64_t co = 0; co < cout; ++co) {
                const Scalar* go = g.data() + co * oh * ow;
                for (std::int64_t ci = 0; ci < cin; ++ci) {
                    const Scalar* xi = x.data() + ci * h * w;
                    Scalar* gxi = gx ? gx + ci * h * w : nullptr;
                    for (std::int64_t ky = 0; ky < k; ++ky) {
                        auto [y0, y1] = valid(ky, h, oh);
                        for (std::int64_t kx = 0; kx < k; ++kx) {
                            const std::size_t widx = static_cast<std::size_t>(((co * cin + ci) * k + ky) * k + kx);
                            const Scalar wv = wt[widx];
                            auto [x0, x1] = valid(kx, w, ow);
                            double acc = 0;
                            for (std::int64_t oy = y0; oy < y1; ++oy) {
                                const std::int64_t base = (oy * stride - padding + ky) * w - padding + kx;
                                const Scalar* grow = go + oy * ow;
                                if (gw) {
                                    const Scalar* row = xi + base;
                                    for (std::int64_t ox = x0; ox < x1; ++ox) acc += double(grow[ox]) * row[ox * stride];
                                }
                                if (gxi) {
                                    Scalar* gxrow = gxi + base;
                                    for (std::int64_t ox = x0; ox < x1; ++ox) gxrow[ox * stride] += wv * grow[ox];
                                }
                            }
                            if (gw) gw[widx] += static_cast<Scalar>(acc);
                        }
                    }
                }
            }
        });
    }
    return result;
}

namespace {

struct AxisSample {
    std::int64_t lo, hi;
    Scalar w_hi;  // weight of hi; lo gets 1 - w_hi
};

std::vector<AxisSample> upsample_axis(std::int64_t in_size, int factor) {
    const std::int64_t out_size = in_size * factor;
    std::vector<AxisSample> s(static_cast<std::size_t>(out_size));
    for (std::int64_t o = 0; o < out_size; ++o) {
        double src = (double(o) + 0.5) / factor - 0.5;
        src = std::clamp(src, 0.0, double(in_size - 1));
        const auto lo = static_cast<std::int64_t>(std::floor(src));
        const auto hi = std::min(lo + 1, in_size - 1);
        s[o] = {lo, hi, static_cast<Scalar>(src - double(lo))};
    }
    return s;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, int factor) {
    require_rank(x, 3, "bilinear_upsample");
    if (factor < 1) throw ArgumentError("bilinear_upsample: factor must be >= 1");
    if (factor == 1) return reshape(x, x.shape());
    const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const auto oh = h * factor, ow = w * factor;
    auto ys = upsample_axis(h, factor), xs = upsample_axis(w, factor);
    std::vector<Scalar> out(static_cast<std::size_t>(c * oh * ow));
    auto v = x.values();
    for (std::int64_t ch = 0; ch < c; ++ch) {
        const Scalar* src = v.data() + ch * h * w;
        Scalar* dst = out.data() + ch * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
            const auto& sy = ys[oy];
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                const auto& sx = xs[ox];
                const Scalar top = src[sy.lo * w + sx.lo] * (1 - sx.w_hi) + src[sy.lo * w + sx.hi] * sx.w_hi;
                const Scalar bot = src[sy.hi * w + sx.lo] * (1 - sx.w_hi) + src[sy.hi * w + sx.hi] * sx.w_hi;
                dst[oy * ow + ox] = top * (1 - sy.w_hi) + bot * sy.w_hi;
            }
        }
    }
    Tensor result({c, oh, ow}, std::move(out));
    if (Tape* tape = recording_tape({&x})) {
        tape->record(result, {x}, [x, ys, xs, c, h, w, oh, ow](std::span<const Scalar> g) {
            auto& gx = x.grad_buffer();
            for (std::int64_t ch = 0; ch < c; ++ch) {
                Scalar* dst = gx.data() + ch * h * w;
                const Scalar* src = g.data() + ch * oh * ow;
                for (std::int64_t oy = 0; oy < oh; ++oy) {
                    const auto& sy = ys[oy];
                    for (std::int64_t ox = 0; ox < ow; ++ox) {
                        const auto& sx = xs[ox];
                        const Scalar gv = src[oy * ow + ox];
                        const Scalar gt = gv * (1 - sy.w_hi), gb = gv * sy.w_hi;
                        dst[sy.lo * w + sx.lo] += gt * (1 - sx.w_hi);
                        dst[sy.lo * w + sx.hi] += gt * sx.w_hi;
                        dst[sy.hi * w + sx.lo] += gb * (1 - sx.w_hi);
                        dst[sy.hi * w + sx.hi] += gb * sx.w_hi;
                    }
                }
            }
        });
    }
    return result;
}

Tensor channels_to_tokens(const Tensor& x) {
    require_rank(x, 3, "channels_to_tokens");
    const auto c = x.dim(0), plane = x.dim(1) * x.dim(2);
    std::vector<Scalar> out(x.size());
    auto v = x.values();
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t p = 0; p < plane; ++p) out[p * c + ch] = v[ch * plane + p];
    Tensor result({plane, c}, std::move(out));
    if (Tape* tape = recording_tape({&x})) {
        tape->record(result, {x}, [x, c, plane](std::span<const Scalar> g) {
            auto& gx = x.grad_buffer();
            for (std::int64_t ch = 0; ch < c; ++ch)
                for (std::int64_t p = 0; p < plane; ++p) gx[ch * plane + p] += g[p * c + ch];
        });
    }
    return result;
}

Tensor gather_pixels(const Tensor& x, std::span<const PixelIndex> pixels) {
    require_rank(x, 3, "gather_pixels");
    const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const auto k = static_cast<std::int64_t>(pixels.size());
    std::vector<Scalar> out(static_cast<std::size_t>(k * c));
    auto v = x.values();
    for (std::int64_t i = 0; i < k; ++i) {
        const auto& p = pixels[i];
        if (p.row < 0 || p.row >= h || p.col < 0 || p.col >= w) {
            throw BoundsError("gather_pixels: pixel (" + std::to_string(p.row) + ", " + std::to_string(p.col) +
                              ") outside " + shape_string(x.shape()));
        }
        for (std::int64_t ch = 0; ch < c; ++ch) out[i * c + ch] = v[(ch * h + p.row) * w + p.col];
    }
    Tensor result({k, c}, std::move(out));
    if (Tape* tape = recording_tape({&x})) {
        std::vector<PixelIndex> idx(pixels.begin(), pixels.end());
        tape->record(result, {x}, [x, idx, c, h, w](std::span<const Scalar> g) {
            auto& gx = x.grad_buffer();
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::int64_t ch = 0; ch < c; ++ch) gx[(ch * h + idx[i].row) * w + idx[i].col] += g[i * c + ch];
        });
    }
    return result;
}

HAT_NS_END
