#include "hat/pipeline.hpp"

#include <algorithm>
#include <memory>
#include <tuple>

#include "hat/synth.hpp"

HAT_NS_BEGIN

HatConfig model_config(const RunConfig& run, const DatasetManifest& manifest) {
    HatConfig cfg;
    cfg.canvas_height = run.canvas_height;
    cfg.canvas_width = run.canvas_width;
    cfg.channels = run.channels;
    cfg.heads = run.heads;
    cfg.encoder_layers = run.encoder_layers;
    cfg.decoder_layers = run.decoder_layers;
    cfg.mlp_hidden = run.mlp_hidden;
    cfg.ffn_hidden = run.ffn_hidden;
    cfg.freeze_encoder = run.freeze_encoder;
    cfg.seed = run.seed;
    if (!manifest.tasks.empty()) cfg.task_names = manifest.tasks;
    int len = run.max_len;
    for (const auto& r : manifest.records) {
        len = std::max(len, static_cast<int>(r.fixations.size()) - 1);
        if (run.max_len == 0) len = std::max(len, default_max_len(r.condition));
    }
    cfg.max_len = std::max(len, 1);
    cfg.validate();
    return cfg;
}

double canvas_pixels_per_degree(const CanvasDataset& data, double override_ppd) {
    if (override_ppd > 0) return override_ppd;
    const auto& images = data.manifest.images;
    if (images.empty()) return data.manifest.pixels_per_degree;
    double factor = 0;
    for (const auto& e : images) factor += 0.5 * (double(data.width) / e.width + double(data.height) / e.height);
    return data.manifest.pixels_per_degree * factor / static_cast<double>(images.size());
}

FitOptions fit_options(const RunConfig& run, double canvas_ppd) {
    FitOptions fo;
    fo.epochs = run.epochs;
    fo.batch = run.batch;
    fo.lr = run.lr;
    fo.weight_decay = run.weight_decay;
    fo.seed = run.seed;
    fo.loss.alpha = run.focal_alpha;
    fo.loss.beta = run.focal_beta;
    fo.loss.sigma_px = run.sigma_px > 0 ? run.sigma_px : canvas_ppd;
    fo.compute_omega = run.omega == 0;
    if (!fo.compute_omega) fo.loss.omega = run.omega;
    return fo;
}

MetricParams metric_params(const RunConfig& run, double canvas_ppd) {
    MetricParams p;
    p.alignment.match_reward = run.match_reward;
    p.alignment.mismatch_penalty = run.mismatch_penalty;
    p.alignment.gap_penalty = run.gap_penalty;
    p.bandwidth_px = run.bandwidth_px > 0 ? run.bandwidth_px : canvas_ppd;
    p.sigma_px = run.sigma_px > 0 ? run.sigma_px : canvas_ppd;
    p.recall_threshold = run.recall_threshold;
    p.ig_epsilon = run.ig_epsilon;
    return p;
}

std::vector<ScanpathRecord> canvas_records(const DatasetManifest& manifest, int height, int width) {
    std::vector<ScanpathRecord> out = manifest.records;
    for (auto& r : out) {
        const auto& e = manifest.images[manifest.image_index(r.image)];
        r.fixations = scale_fixations(r.fixations, e.height, e.width, height, width);
    }
    return out;
}

std::vector<GeneratedGroup> generate_for_dataset(const HatModel& model, const CanvasDataset& data,
                                                 const GenerationRequest& request) {
    if (request.samples < 1) throw ArgumentError("generate_for_dataset: samples must be >= 1");
    const auto& m = data.manifest;
    std::vector<std::tuple<std::size_t, std::string, Condition>> seen;
    std::vector<Fixation> starts;
    for (const auto& r : m.records) {
        auto key = std::make_tuple(m.image_index(r.image), r.task, r.condition);
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
        seen.push_back(key);
        starts.push_back(r.fixations.front());
    }

    Rng seeds(request.seed);
    std::vector<GeneratedGroup> out;
    std::size_t cached = static_cast<std::size_t>(-1);
    Tensor image;
    for (std::size_t g = 0; g < seen.size(); ++g) {
        const auto& [img, task, condition] = seen[g];
        if (img != cached) {
            image = image_tensor(data.images[img]);
            cached = img;
        }
        GenerationPolicy policy;
        policy.mode = request.mode;
        policy.max_len = request.max_len > 0 ? request.max_len : default_max_len(condition);
        policy.threshold = request.threshold;
        policy.keep_heatmaps = request.keep_heatmaps;
        for (int s = 0; s < request.samples; ++s) {
            policy.seed = seeds.next();
            GeneratedGroup gg;
            gg.image = img;
            gg.task = task;
            gg.condition = condition;
            gg.sample = s;
            gg.path = generate(model, image, model.task_index(task), policy, starts[g]);
            out.push_back(std::move(gg));
        }
    }
    return out;
}

ScanpathRecord to_manifest_record(const GeneratedGroup& group, const CanvasDataset& data) {
    const auto& entry = data.manifest.images.at(group.image);
    GeneratedScanpath path = group.path;
    path.fixations = scale_fixations(path.fixations, data.height, data.width, entry.height, entry.width);
    const std::string subject = "model" + std::to_string(group.sample);
    return path.to_record(entry.id, group.task, subject, group.condition);
}

NextFixationPredictor model_predictor(const HatModel& model, const CanvasDataset& data) {
    struct Cache {
        std::size_t image = static_cast<std::size_t>(-1);
        ImageContext context;
    };
    auto cache = std::make_shared<Cache>();
    return [&model, &data, cache](const ScanpathRecord& record, std::size_t history) {
        const std::size_t img = data.manifest.image_index(record.image);
        if (img != cache->image) {
            cache->context = model.prepare(image_tensor(data.images[img]));
            cache->image = img;
        }
        const std::span<const Fixation> past(record.fixations.data(), history);
        const PredictionSet out = model.predict_from(cache->context, past);
        const auto H = out.heatmaps.dim(1), W = out.heatmaps.dim(2);
        const auto task = static_cast<std::size_t>(model.task_index(record.task));
        const auto all = out.heatmaps.values();
        const auto map = all.subspan(task * static_cast<std::size_t>(H * W), static_cast<std::size_t>(H * W));
        return std::vector<double>(map.begin(), map.end());
    };
}

HAT_NS_END
