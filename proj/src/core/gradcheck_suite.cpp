#include "hat/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>

#include "hat/errors.hpp"
#include "hat/gradcheck.hpp"
#include "hat/training.hpp"

#if defined(HAT_DOUBLE) && HAT_DOUBLE
#define HAT_SUITE_ENTRY run_gradcheck_suite_64
#else
#define HAT_SUITE_ENTRY run_gradcheck_suite_32
#endif

HAT_NS_BEGIN

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1, bool requires_grad = true) {
    std::vector<Scalar> v(static_cast<std::size_t>(numel(shape)));
    // Rounded through float so both builds draw identical values.
    for (auto& x : v) x = static_cast<Scalar>(static_cast<float>(rng.uniform(lo, hi)));
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Values bounded away from zero so relu kinks stay outside the probe step.
Tensor away_from_zero(Shape shape, Rng& rng) {
    std::vector<Scalar> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) {
        const double m = rng.uniform(0.2, 1.0);
        x = static_cast<Scalar>(static_cast<float>(rng.uniform() < 0.5 ? -m : m));
    }
    return Tensor(std::move(shape), std::move(v), true);
}

struct Probe {
    std::function<Tensor()> f;
    NamedParameters inputs;
    std::size_t samples = 0;
    std::uint64_t seed = 0;

    GradCheckOptions options() const {
        GradCheckOptions o;
        o.max_elements_per_input = samples;
        o.seed = seed;
        return o;
    }
};

struct Family {
    std::string name;
    bool quadratic;  // at most quadratic in every input
    std::function<Probe(Rng&)> build;
};

Probe check(std::function<Tensor()> f, NamedParameters inputs, std::size_t samples = 0, std::uint64_t seed = 0) {
    return {std::move(f), std::move(inputs), samples, seed};
}

// Each family gets its own generator, forked in order from the suite seed.
Probe build_family(const std::vector<Family>& all, std::size_t index, std::uint64_t seed) {
    Rng rng(seed);
    Rng local = rng.fork();
    for (std::size_t i = 0; i < index; ++i) local = rng.fork();
    return all.at(index).build(local);
}

std::vector<Family> families(const GradCheckSuiteOptions& options) {
    std::vector<Family> out;
    out.push_back({"sum_of_squares", true, [](Rng& rng) {
                       Tensor x = random_tensor({4, 5}, rng);
                       return check([=] { return sum(mul(x, x)); }, {{"x", x}});
                   }});
    out.push_back({"elementwise", true, [](Rng& rng) {
                       Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
                       const Tensor r = random_tensor({3, 4}, rng, -1, 1, false);
                       return check([=] { return sum(mul(mul(add(a, scale(b, 0.5)), sub(a, add_scalar(b, 0.3))), r)); },
                                    {{"a", a}, {"b", b}});
                   }});
    out.push_back({"matmul_transpose", true, [](Rng& rng) {
                       Tensor a = random_tensor({4, 6}, rng), b = random_tensor({5, 6}, rng);
                       const Tensor r = random_tensor({4, 5}, rng, -1, 1, false);
                       return check([=] { return sum(mul(matmul(a, transpose(b)), r)); }, {{"a", a}, {"b", b}});
                   }});
    out.push_back({"reshape_concat_slice", true, [](Rng& rng) {
                       Tensor a = random_tensor({2, 6}, rng), b = random_tensor({3, 6}, rng);
                       const Tensor r = random_tensor({4, 3}, rng, -1, 1, false);
                       return check(
                           [=] {
                               const Tensor rows[] = {a, b};
                               const Tensor stacked = concat_rows(rows);
                               const Tensor cols[] = {slice_cols(stacked, 0, 3), slice_cols(stacked, 3, 3)};
                               const Tensor wide = concat_cols(cols);
                               const Tensor part = reshape(slice_rows(wide, 1, 2), {4, 3});
                               return sum(mul(mul(part, part), r));
                           },
                           {{"a", a}, {"b", b}});
                   }});
    out.push_back({"bias", true, [](Rng& rng) {
                       Tensor x = random_tensor({3, 4}, rng), rb = random_tensor({4}, rng);
                       Tensor y = random_tensor({4, 3, 2}, rng), cb = random_tensor({4}, rng);
                       const Tensor r1 = random_tensor({3, 4}, rng, -1, 1, false);
                       const Tensor r2 = random_tensor({4, 3, 2}, rng, -1, 1, false);
                       return check(
                           [=] {
                               const Tensor u = add_row_bias(x, rb), v = add_channel_bias(y, cb);
                               return add(sum(mul(mul(u, u), r1)), sum(mul(mul(v, v), r2)));
                           },
                           {{"x", x}, {"row_bias", rb}, {"y", y}, {"channel_bias", cb}});
                   }});
    out.push_back({"relu", false, [](Rng& rng) {
                       Tensor x = away_from_zero({3, 5}, rng);
                       return check([x, r = random_tensor({3, 5}, rng, -1, 1, false)] { return sum(mul(relu(x), r)); },
                                    {{"x", x}});
                   }});
    out.push_back({"sigmoid_exp_log", false, [](Rng& rng) {
                       Tensor x = random_tensor({3, 4}, rng), p = random_tensor({3, 4}, rng, 0.5, 2.0);
                       const Tensor r = random_tensor({3, 4}, rng, -1, 1, false);
                       return check([=] { return sum(mul(add(add(sigmoid(x), exp(x)), log(p)), r)); },
                                    {{"x", x}, {"p", p}});
                   }});
    out.push_back({"softmax_log", false, [](Rng& rng) {
                       Tensor x = random_tensor({3, 5}, rng, -2, 2);
                       const Tensor r = random_tensor({3, 5}, rng, 0, 1, false);
                       return check([=] { return sum(mul(log(softmax_rows(x)), r)); }, {{"x", x}});
                   }});
    out.push_back({"mean", true, [](Rng& rng) {
                       Tensor x = random_tensor({3, 4}, rng);
                       return check([=] { return mean(mul(x, x)); }, {{"x", x}});
                   }});
    out.push_back({"layer_norm", false, [](Rng& rng) {
                       Tensor x = random_tensor({3, 6}, rng), g = random_tensor({6}, rng, 0.5, 1.5),
                              b = random_tensor({6}, rng);
                       const Tensor r = random_tensor({3, 6}, rng, -1, 1, false);
                       return check([=] { return sum(mul(layer_norm_rows(x, g, b), r)); },
                                    {{"x", x}, {"gamma", g}, {"beta", b}});
                   }});
    out.push_back({"conv2d", true, [](Rng& rng) {
                       Tensor x = random_tensor({2, 7, 6}, rng), w1 = random_tensor({3, 2, 3, 3}, rng),
                              w2 = random_tensor({3, 2, 3, 3}, rng);
                       const Tensor r1 = random_tensor({3, 7, 6}, rng, -1, 1, false);
                       const Tensor r2 = random_tensor({3, 3, 2}, rng, -1, 1, false);
                       return check(
                           [=] {
                               return add(sum(mul(conv2d(x, w1, 1, 1), r1)), sum(mul(conv2d(x, w2, 2, 0), r2)));
                           },
                           {{"input", x}, {"weight_s1", w1}, {"weight_s2", w2}});
                   }});
    out.push_back({"bilinear_upsample", true, [](Rng& rng) {
                       Tensor x = random_tensor({2, 3, 4}, rng);
                       const Tensor r = random_tensor({2, 12, 16}, rng, -1, 1, false);
                       return check([=] { const Tensor u = bilinear_upsample(x, 4); return sum(mul(mul(u, u), r)); },
                                    {{"x", x}});
                   }});
    out.push_back({"tokens_gather", true, [](Rng& rng) {
                       Tensor x = random_tensor({3, 4, 5}, rng);
                       const Tensor r1 = random_tensor({20, 3}, rng, -1, 1, false);
                       const Tensor r2 = random_tensor({3, 3}, rng, -1, 1, false);
                       const std::vector<PixelIndex> cells = {{0, 0}, {3, 4}, {0, 0}};
                       return check(
                           [=] {
                               return add(sum(mul(channels_to_tokens(x), r1)), sum(mul(gather_pixels(x, cells), r2)));
                           },
                           {{"x", x}});
                   }});
    out.push_back({"multi_head_attention", false, [](Rng& rng) {
                       MultiHeadAttention mha(8, 2, rng);
                       Tensor q = random_tensor({2, 8}, rng), kv = random_tensor({3, 8}, rng);
                       const Tensor r = random_tensor({2, 8}, rng, -1, 1, false);
                       NamedParameters inputs = {{"q", q}, {"kv", kv}};
                       mha.collect("mha", inputs);
                       return check([=] { return sum(mul(mha.forward(q, kv, kv).output, r)); }, inputs);
                   }});
    out.push_back({"decoder_layer", false, [](Rng& rng) {
                       DecoderLayer layer(8, 4, 32, rng);
                       Tensor q = random_tensor({2, 8}, rng), mem = random_tensor({3, 8}, rng);
                       const Tensor r = random_tensor({2, 8}, rng, -1, 1, false);
                       NamedParameters inputs = {{"queries", q}, {"memory", mem}};
                       layer.collect("decoder", inputs);
                       return check([=] { return sum(mul(layer.forward(q, mem), r)); }, inputs);
                   }});
    out.push_back({"encoder_layer", false, [](Rng& rng) {
                       EncoderLayer layer(8, 4, 32, rng);
                       Tensor x = random_tensor({4, 8}, rng);
                       const Tensor r = random_tensor({4, 8}, rng, -1, 1, false);
                       NamedParameters inputs = {{"tokens", x}};
                       layer.collect("encoder", inputs);
                       return check([=] { return sum(mul(layer.forward(x), r)); }, inputs);
                   }});
    out.push_back({"focal_loss", false, [](Rng& rng) {
                       Tensor p = random_tensor({6, 7}, rng, 0.05, 0.95);
                       const Tensor y = make_gt_heatmap({3.2, 2.7}, 6, 7, 1.5);
                       return check([=] { return focal_loss(p, y, 2, 4); }, {{"prediction", p}});
                   }});
    out.push_back({"termination_loss", false, [](Rng& rng) {
                       Tensor p = random_tensor({1}, rng, 0.2, 0.8), q = random_tensor({1}, rng, 0.2, 0.8);
                       return check([=] { return add(termination_loss(p, 1, 3), termination_loss(q, 0, 3)); },
                                    {{"tau_positive", p}, {"tau_negative", q}});
                   }});
    if (options.include_model) {
        const std::size_t samples = options.model_samples_per_tensor;
        const std::uint64_t seed = options.seed;
        out.push_back({"end_to_end_model", false, [samples, seed](Rng& rng) {
                           HatConfig cfg;
                           cfg.canvas_height = 32;
                           cfg.canvas_width = 32;
                           cfg.channels = 8;
                           cfg.heads = 4;
                           cfg.max_len = 6;
                           cfg.seed = seed;
                           cfg.task_names = {"a", "b"};
                           HatModel model(cfg);
                           Tensor image = random_tensor({3, 32, 32}, rng, 0, 1, false);
                           ScanpathRecord rec;
                           rec.fixations = {{16, 16}, {5.3, 24.8}, {27.0, 9.6}};
                           TrainingExample ex;
                           ex.task = 1;
                           ex.history_length = 2;
                           ex.target = rec.fixations[2];
                           LossParams lp;
                           lp.sigma_px = 2;
                           lp.omega = 2;
                           return check(
                               [=] {
                                   const ImageContext ctx = model.prepare(image);
                                   return example_loss(model, ctx, rec, ex, lp).total;
                               },
                               model.parameters(), samples, seed);
                       }});
    }
    return out;
}

}  // namespace

HAT_NS_END

namespace hat {

#if defined(HAT_DOUBLE) && HAT_DOUBLE
std::vector<std::vector<CentralDifference>> central_differences_64(const OracleRequest& request) {
    const auto all = HAT_PRECISION_NS::families(request.options);
    if (request.family_index >= all.size()) throw ArgumentError("central_differences_64: no such family");
    HAT_PRECISION_NS::Probe p = HAT_PRECISION_NS::build_family(all, request.family_index, request.options.seed);
    if (request.values.size() != p.inputs.size() || request.probed.size() != p.inputs.size()) {
        throw ArgumentError("central_differences_64: input count mismatch for " + all[request.family_index].name);
    }
    for (std::size_t k = 0; k < p.inputs.size(); ++k) {
        auto dst = p.inputs[k].second.values_for_update();
        const auto& src = request.values[k];
        if (src.size() != dst.size()) throw ArgumentError("central_differences_64: size mismatch for " + p.inputs[k].first);
        std::copy(src.begin(), src.end(), dst.begin());
    }
    const HAT_PRECISION_NS::GradCheckOptions o = p.options();
    std::vector<std::vector<CentralDifference>> out(p.inputs.size());
    for (std::size_t k = 0; k < p.inputs.size(); ++k) {
        for (std::size_t i : request.probed[k]) out[k].push_back(central_difference(p.f, p.inputs[k].second, i, o));
    }
    return out;
}
#endif

GradCheckSuiteReport HAT_SUITE_ENTRY(const GradCheckSuiteOptions& options) {
    using namespace HAT_PRECISION_NS;
    GradCheckSuiteReport report;
    report.scalar_bits = kScalarBits;
    report.passed = true;
    const auto all = families(options);
    double worst_ratio = -1;
    for (std::size_t index = 0; index < all.size(); ++index) {
        const Family& fam = all[index];
        const Probe p = build_family(all, index, options.seed);
        GradCheckOptions o = p.options();
        GradCheckResult r = grad_check(p.f, p.inputs, o);
        GradCheckFamilyReport f;
        f.oracle_bits = kScalarBits;
        if (kScalarBits == 32 && options.wide_oracle) {
            f.same_precision_error = r.max_relative_error;
            f.oracle_bits = 64;
            o.oracle = [&](const std::vector<std::vector<std::size_t>>& probed) {
                OracleRequest req;
                req.options = options;
                req.family_index = index;
                req.probed = probed;
                for (const auto& [name, t] : p.inputs) req.values.emplace_back(t.values().begin(), t.values().end());
                return central_differences_64(req);
            };
            r = grad_check(p.f, p.inputs, o);
        }
        f.family = fam.name;
        f.max_relative_error = r.max_relative_error;
        f.worst_input = r.worst_input;
        for (const auto& e : r.entries) {
            f.checked += e.checked;
            f.reduced_steps += e.reduced_steps;
            f.unresolved_kinks += e.unresolved_kinks;
            f.worst_element_error = std::max(f.worst_element_error, e.worst_element_error);
        }
        f.threshold = kScalarBits == 32 ? 1e-3 : (fam.quadratic ? 1e-6 : 1e-4);
        f.passed = f.max_relative_error < f.threshold;
        report.passed = report.passed && f.passed;
        // Worst family relative to its own threshold.
        const double ratio = f.max_relative_error / f.threshold;
        if (ratio > worst_ratio) {
            worst_ratio = ratio;
            report.worst_family = f.family;
            report.worst_error = f.max_relative_error;
        }
        report.families.push_back(std::move(f));
    }
    return report;
}

}  // namespace hat
