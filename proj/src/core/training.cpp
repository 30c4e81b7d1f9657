#include "hat/training.hpp"

#include <cmath>
#include <map>

#include "hat/errors.hpp"
#include "hat/rng.hpp"

HAT_NS_BEGIN

std::vector<TrainingExample> expand_scanpaths(const DatasetManifest& manifest) {
    std::vector<TrainingExample> out;
    for (std::size_t r = 0; r < manifest.records.size(); ++r) {
        const auto& rec = manifest.records[r];
        TrainingExample base;
        base.record = r;
        base.image = manifest.image_index(rec.image);
        base.task = manifest.task_index(rec.task);
        for (std::size_t i = 1; i < rec.fixations.size(); ++i) {
            TrainingExample e = base;
            e.history_length = i;
            e.target = rec.fixations[i];
            out.push_back(e);
        }
        if (rec.terminated) {
            TrainingExample e = base;
            e.history_length = rec.fixations.size();
            e.terminal = true;
            out.push_back(e);
        }
    }
    return out;
}

double compute_omega(std::span<const TrainingExample> examples) {
    std::size_t pos = 0, neg = 0;
    for (const auto& e : examples) (e.terminal ? pos : neg)++;
    if (pos == 0) throw ConfigError("compute_omega: no terminal examples in the training split");
    return static_cast<double>(neg) / static_cast<double>(pos);
}

Tensor make_gt_heatmap(const Fixation& f, int height, int width, double sigma_px) {
    if (!(f.x >= 0 && f.x < width && f.y >= 0 && f.y < height)) {
        throw BoundsError("make_gt_heatmap: fixation outside the map");
    }
    if (!(sigma_px > 0)) throw ArgumentError("make_gt_heatmap: sigma must be positive");
    const long cx = std::min(std::lround(f.x), static_cast<long>(width) - 1);
    const long cy = std::min(std::lround(f.y), static_cast<long>(height) - 1);
    const double k = 1.0 / (2.0 * sigma_px * sigma_px);
    std::vector<double> gx(width), gy(height);
    for (int x = 0; x < width; ++x) gx[x] = std::exp(-k * static_cast<double>((x - cx) * (x - cx)));
    for (int y = 0; y < height; ++y) gy[y] = std::exp(-k * static_cast<double>((y - cy) * (y - cy)));
    std::vector<Scalar> data(static_cast<std::size_t>(height) * width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) data[static_cast<std::size_t>(y) * width + x] = static_cast<Scalar>(gy[y] * gx[x]);
    }
    return Tensor({height, width}, std::move(data));
}

namespace {

// Replacement of boundary values; interior values pass unchanged.
struct Clamped {
    double p;
    bool at_boundary;
};

Clamped clamp_probability(double v) {
    if (v <= 0) return {kLossEpsilon, true};
    if (v >= 1) return {1 - kLossEpsilon, true};
    return {v, false};
}

Tape* tape_for(const Tensor& t) {
    Tape* tape = active_tape();
    return tape && t.requires_grad() ? tape : nullptr;
}

}  // namespace

Tensor focal_loss(const Tensor& prediction, const Tensor& target, double alpha, double beta) {
    if (!prediction.defined() || !target.defined() || prediction.shape() != target.shape()) {
        throw DimensionError("focal_loss: prediction and target shapes differ");
    }
    if (alpha < 0 || beta < 0) throw ArgumentError("focal_loss: exponents must be nonnegative");
    const std::size_t n = prediction.size();
    auto yhat = prediction.values();
    auto y = target.values();
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = clamp_probability(yhat[i]).p;
        if (y[i] == 1) {
            total += std::pow(1 - p, alpha) * std::log(p);
        } else {
            total += std::pow(1 - y[i], beta) * std::pow(p, alpha) * std::log(1 - p);
        }
    }
    const double norm = 1.0 / static_cast<double>(n);
    Tensor result = Tensor::scalar(static_cast<Scalar>(-total * norm));
    if (Tape* tape = tape_for(prediction)) {
        tape->record(result, {prediction}, [prediction, target, alpha, beta, norm](std::span<const Scalar> g) {
            auto yhat = prediction.values();
            auto y = target.values();
            auto& gp = prediction.grad_buffer();
            const double upstream = static_cast<double>(g[0]) * norm;
            for (std::size_t i = 0; i < gp.size(); ++i) {
                const Clamped c = clamp_probability(yhat[i]);
                if (c.at_boundary) continue;
                const double p = c.p;
                double dl;
                if (y[i] == 1) {
                    const double da = alpha == 0 ? 0 : alpha * std::pow(1 - p, alpha - 1) * std::log(p);
                    dl = -da + std::pow(1 - p, alpha) / p;
                } else {
                    const double w = std::pow(1 - y[i], beta);
                    const double da = alpha == 0 ? 0 : alpha * std::pow(p, alpha - 1) * std::log(1 - p);
                    dl = w * (da - std::pow(p, alpha) / (1 - p));
                }
                gp[i] += static_cast<Scalar>(-dl * upstream);
            }
        });
    }
    return result;
}

Tensor termination_loss(const Tensor& prediction, double tau, double omega) {
    if (!prediction.defined() || prediction.size() != 1) throw DimensionError("termination_loss: expected one value");
    if (tau != 0 && tau != 1) throw ArgumentError("termination_loss: tau must be 0 or 1");
    if (!(omega > 0)) throw ArgumentError("termination_loss: omega must be positive");
    const double p = clamp_probability(prediction[0]).p;
    const double value = -omega * tau * std::log(p) - (1 - tau) * std::log(1 - p);
    Tensor result = Tensor::scalar(static_cast<Scalar>(value));
    if (Tape* tape = tape_for(prediction)) {
        tape->record(result, {prediction}, [prediction, tau, omega](std::span<const Scalar> g) {
            const Clamped c = clamp_probability(prediction[0]);
            if (c.at_boundary) return;
            const double d = -omega * tau / c.p + (1 - tau) / (1 - c.p);
            prediction.grad_buffer()[0] += static_cast<Scalar>(d * static_cast<double>(g[0]));
        });
    }
    return result;
}

LossComponents example_loss(const HatModel& model, const ImageContext& context, const ScanpathRecord& record,
                            const TrainingExample& example, const LossParams& params) {
    if (example.history_length < 1 || example.history_length > record.fixations.size()) {
        throw ArgumentError("example_loss: history length out of range");
    }
    const std::span<const Fixation> history(record.fixations.data(), example.history_length);
    const PredictionSet out = model.predict_from(context, history);
    const auto N = out.heatmaps.dim(0), H = out.heatmaps.dim(1), W = out.heatmaps.dim(2);
    if (example.task < 0 || example.task >= N) throw ArgumentError("example_loss: task out of range");
    const Tensor tau = reshape(slice_rows(out.terminations, example.task, 1), {1});

    LossComponents c;
    const Tensor term = termination_loss(tau, example.terminal ? 1.0 : 0.0, params.omega);
    c.termination = static_cast<double>(term.item());
    if (example.terminal) {
        c.total = term;
        return c;
    }
    if (!example.target) throw ArgumentError("example_loss: non-terminal example without a target");
    const Tensor heatmap = reshape(slice_rows(reshape(out.heatmaps, {N, H * W}), example.task, 1), {H, W});
    const Tensor gt = make_gt_heatmap(*example.target, static_cast<int>(H), static_cast<int>(W), params.sigma_px);
    const Tensor fix = focal_loss(heatmap, gt, params.alpha, params.beta);
    c.fixation = static_cast<double>(fix.item());
    c.total = add(fix, term);
    return c;
}

LossComponents total_loss(const HatModel& model, const CanvasDataset& data, const TrainingExample& example,
                          const LossParams& params) {
    const ImageContext ctx = model.prepare(image_tensor(data.images.at(example.image)));
    return example_loss(model, ctx, data.manifest.records.at(example.record), example, params);
}

// --- optimizer --------------------------------------------------------------------

AdamW::AdamW(NamedParameters parameters, double lr_, double weight_decay_, double beta1, double beta2, double eps)
    : lr(lr_), weight_decay(weight_decay_), params_(std::move(parameters)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, t] : params_) {
        m_.emplace_back(t.size(), 0.0);
        v_.emplace_back(t.size(), 0.0);
    }
}

void AdamW::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

void AdamW::step() {
    ++t_;
    const double c1 = 1 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].second;
        if (!p.has_grad()) continue;
        auto values = p.values_for_update();
        auto grad = p.grad_for_update();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double g = grad[j];
            m[j] = beta1_ * m[j] + (1 - beta1_) * g;
            v[j] = beta2_ * v[j] + (1 - beta2_) * g * g;
            const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_) + weight_decay * values[j];
            values[j] = static_cast<Scalar>(values[j] - lr * update);
        }
    }
}

// --- fit --------------------------------------------------------------------------

nlohmann::json EpochLog::to_json() const {
    return {{"epoch", epoch}, {"step", step}, {"L_fix", fixation}, {"L_term", termination}, {"L", total}};
}

FitResult fit(HatModel& model, const CanvasDataset& data, const FitOptions& options, const EpochCallback& on_epoch) {
    if (options.epochs < 0 || options.batch < 1) throw ConfigError("fit: need epochs >= 0 and batch >= 1");
    if (data.height != model.config().canvas_height || data.width != model.config().canvas_width) {
        throw ConfigError("fit: dataset canvas does not match the model canvas");
    }
    const auto examples = expand_scanpaths(data.manifest);
    FitResult result;
    result.examples = examples.size();
    LossParams loss = options.loss;
    if (options.compute_omega) loss.omega = compute_omega(examples);
    result.omega = loss.omega;
    if (examples.empty()) return result;

    std::vector<Tensor> images;
    for (const auto& img : data.images) images.push_back(image_tensor(img));

    AdamW optimizer(model.trainable_parameters(), options.lr, options.weight_decay);
    const auto all_params = model.parameters();
    Rng rng(options.seed);
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const auto batch = static_cast<std::size_t>(options.batch);

    for (int epoch = 1; epoch <= options.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
        double sum_fix = 0, sum_term = 0, sum_total = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            const auto inv = static_cast<Scalar>(1.0 / static_cast<double>(end - start));
            // Group the batch by image, keeping first-occurrence order.
            std::vector<std::pair<std::size_t, std::vector<std::size_t>>> groups;
            std::map<std::size_t, std::size_t> slot;
            for (std::size_t k = start; k < end; ++k) {
                const auto& e = examples[order[k]];
                auto it = slot.find(e.image);
                if (it == slot.end()) {
                    it = slot.emplace(e.image, groups.size()).first;
                    groups.push_back({e.image, {}});
                }
                groups[it->second].second.push_back(order[k]);
            }
            for (const auto& [image, members] : groups) {
                Tape tape;
                TapeScope scope(tape);
                const ImageContext ctx = model.prepare(images[image]);
                std::vector<Tensor> parts;
                for (std::size_t idx : members) {
                    const auto& e = examples[idx];
                    const LossComponents c = example_loss(model, ctx, data.manifest.records[e.record], e, loss);
                    const double value = static_cast<double>(c.total.item());
                    if (!std::isfinite(value)) {
                        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                              std::to_string(optimizer.steps() + 1) + ", record " +
                                              std::to_string(e.record) + " (history " +
                                              std::to_string(e.history_length) + ")");
                    }
                    sum_fix += c.fixation;
                    sum_term += c.termination;
                    sum_total += value;
                    parts.push_back(c.total);
                }
                Tensor group_loss = parts[0];
                for (std::size_t k = 1; k < parts.size(); ++k) group_loss = add(group_loss, parts[k]);
                backward(scale(group_loss, inv), tape);
            }
            optimizer.step();
            for (auto p : all_params) p.second.zero_grad();
        }
        EpochLog log;
        log.epoch = epoch;
        log.step = optimizer.steps();
        const double n = static_cast<double>(examples.size());
        log.fixation = sum_fix / n;
        log.termination = sum_term / n;
        log.total = sum_total / n;
        result.log.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    return result;
}

HAT_NS_END
