#include "hat/inference.hpp"

#include "hat/errors.hpp"
#include "hat/rng.hpp"

HAT_NS_BEGIN

GenerationMode parse_generation_mode(const std::string& text) {
    if (text == "greedy") return GenerationMode::greedy;
    if (text == "sample") return GenerationMode::sample;
    throw ArgumentError("unknown generation mode '" + text + "'");
}

std::string to_string(GenerationMode mode) { return mode == GenerationMode::greedy ? "greedy" : "sample"; }

void GenerationPolicy::validate() const {
    if (max_len < 1) throw ConfigError("generation: max_len must be >= 1");
    if (!(threshold > 0 && threshold < 1)) throw ConfigError("generation: threshold must lie in (0, 1)");
}

Fixation canvas_centre(int height, int width) { return {width / 2.0, height / 2.0}; }

GeneratedScanpath generate(const HatModel& model, const Tensor& image, int task, const GenerationPolicy& policy,
                           std::optional<Fixation> initial) {
    policy.validate();
    const auto& cfg = model.config();
    if (task < 0 || task >= cfg.num_tasks()) throw ArgumentError("generate: unknown task id " + std::to_string(task));
    if (policy.max_len > cfg.max_len) {
        throw ConfigError("generate: max_len " + std::to_string(policy.max_len) + " exceeds the model's temporal table (" +
                          std::to_string(cfg.max_len) + ")");
    }
    Rng rng(policy.seed);
    GeneratedScanpath path;
    path.fixations.push_back(initial ? *initial : canvas_centre(cfg.canvas_height, cfg.canvas_width));

    std::optional<ImageContext> ctx;
    Tensor foveal;
    if (!policy.naive) ctx = model.prepare(image);

    for (;;) {
        PredictionSet out;
        if (policy.naive) {
            out = model.forward_all(image, path.fixations);
        } else {
            const Tensor fresh = model.foveal_tokens(ctx->pyramid, std::span<const Fixation>(&path.fixations.back(), 1),
                                                     path.fixations.size() - 1);
            if (foveal.defined()) {
                const Tensor parts[] = {foveal, fresh};
                foveal = concat_rows(parts);
            } else {
                foveal = fresh;
            }
            out = model.predict_from(*ctx, path.fixations, &foveal);
        }
        const auto H = out.heatmaps.dim(1), W = out.heatmaps.dim(2);
        const double tau = static_cast<double>(out.terminations[static_cast<std::size_t>(task)]);
        path.termination_probs.push_back(tau);
        const auto all = out.heatmaps.values();
        const std::span<const Scalar> map = all.subspan(static_cast<std::size_t>(task * H * W),
                                                        static_cast<std::size_t>(H * W));
        if (policy.keep_heatmaps) path.heatmaps.emplace_back(map.begin(), map.end());
        if (tau > policy.threshold) {
            path.terminated_by = TerminatedBy::threshold;
            break;
        }
        const Fixation next = policy.mode == GenerationMode::greedy
                                  ? argmax_pixel<Scalar>(map, static_cast<int>(H), static_cast<int>(W))
                                  : sample_pixel(map, static_cast<int>(H), static_cast<int>(W), rng);
        path.fixations.push_back(next);
        if (static_cast<int>(path.fixations.size()) - 1 >= policy.max_len) {
            path.terminated_by = TerminatedBy::cap;
            break;
        }
    }
    return path;
}

HAT_NS_END
