#include "hat/run_config.hpp"

#include <fstream>

#include "hat/errors.hpp"

namespace hat {

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["subcommand"] = subcommand;
    j["manifest"] = manifest;
    j["checkpoint"] = checkpoint;
    j["predictions"] = predictions;
    j["out_dir"] = out_dir;
    j["canvas_height"] = canvas_height;
    j["canvas_width"] = canvas_width;
    j["channels"] = channels;
    j["heads"] = heads;
    j["encoder_layers"] = encoder_layers;
    j["decoder_layers"] = decoder_layers;
    j["mlp_hidden"] = mlp_hidden;
    j["ffn_hidden"] = ffn_hidden;
    j["freeze_encoder"] = freeze_encoder;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["epochs"] = epochs;
    j["batch"] = batch;
    j["seed"] = seed;
    j["focal_alpha"] = focal_alpha;
    j["focal_beta"] = focal_beta;
    j["omega"] = omega;
    j["mode"] = mode;
    j["max_len"] = max_len;
    j["threshold"] = threshold;
    j["samples"] = samples;
    j["dump_heatmaps"] = dump_heatmaps;
    j["dump_contributions"] = dump_contributions;
    j["pixels_per_degree"] = pixels_per_degree;
    j["bandwidth_px"] = bandwidth_px;
    j["sigma_px"] = sigma_px;
    j["match_reward"] = match_reward;
    j["mismatch_penalty"] = mismatch_penalty;
    j["gap_penalty"] = gap_penalty;
    j["ig_epsilon"] = ig_epsilon;
    j["recall_threshold"] = recall_threshold;
    j["baseline_manifest"] = baseline_manifest;
    j["precision"] = precision;
    return j;
}

namespace {

template <typename T>
void take(const nlohmann::json& j, const char* key, T& field) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        field = it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

}  // namespace

void RunConfig::apply(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    const nlohmann::json known = to_json();
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    }
    take(j, "subcommand", subcommand);
    take(j, "manifest", manifest);
    take(j, "checkpoint", checkpoint);
    take(j, "predictions", predictions);
    take(j, "out_dir", out_dir);
    take(j, "canvas_height", canvas_height);
    take(j, "canvas_width", canvas_width);
    take(j, "channels", channels);
    take(j, "heads", heads);
    take(j, "encoder_layers", encoder_layers);
    take(j, "decoder_layers", decoder_layers);
    take(j, "mlp_hidden", mlp_hidden);
    take(j, "ffn_hidden", ffn_hidden);
    take(j, "freeze_encoder", freeze_encoder);
    take(j, "lr", lr);
    take(j, "weight_decay", weight_decay);
    take(j, "epochs", epochs);
    take(j, "batch", batch);
    take(j, "seed", seed);
    take(j, "focal_alpha", focal_alpha);
    take(j, "focal_beta", focal_beta);
    take(j, "omega", omega);
    take(j, "mode", mode);
    take(j, "max_len", max_len);
    take(j, "threshold", threshold);
    take(j, "samples", samples);
    take(j, "dump_heatmaps", dump_heatmaps);
    take(j, "dump_contributions", dump_contributions);
    take(j, "pixels_per_degree", pixels_per_degree);
    take(j, "bandwidth_px", bandwidth_px);
    take(j, "sigma_px", sigma_px);
    take(j, "match_reward", match_reward);
    take(j, "mismatch_penalty", mismatch_penalty);
    take(j, "gap_penalty", gap_penalty);
    take(j, "ig_epsilon", ig_epsilon);
    take(j, "recall_threshold", recall_threshold);
    take(j, "baseline_manifest", baseline_manifest);
    take(j, "precision", precision);
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    c.apply(j);
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

void RunConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_json().dump(2) << "\n";
}

void RunConfig::validate() const {
    auto need = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    need(canvas_height >= 32 && canvas_width >= 32, "canvas must be at least 32x32");
    need(canvas_height % 32 == 0 && canvas_width % 32 == 0, "canvas dimensions must be divisible by 32");
    need(channels > 0 && channels % 4 == 0, "channels must be a positive multiple of 4");
    need(heads > 0 && channels % heads == 0, "channels must be divisible by heads");
    need(encoder_layers >= 0 && decoder_layers >= 1, "need encoder_layers >= 0 and decoder_layers >= 1");
    need(mlp_hidden > 0 && ffn_hidden >= 0, "mlp_hidden must be positive and ffn_hidden nonnegative");
    need(lr >= 0 && weight_decay >= 0, "lr and weight_decay must be nonnegative");
    need(epochs >= 0 && batch >= 1, "need epochs >= 0 and batch >= 1");
    need(focal_alpha >= 0 && focal_beta >= 0 && omega >= 0, "focal exponents and omega must be nonnegative");
    need(mode == "greedy" || mode == "sample", "mode must be 'greedy' or 'sample'");
    need(max_len >= 0, "max_len must be nonnegative");
    need(threshold > 0 && threshold < 1, "threshold must lie in (0, 1)");
    need(samples >= 1, "samples must be >= 1");
    need(pixels_per_degree >= 0 && bandwidth_px >= 0 && sigma_px >= 0, "pixel scales must be nonnegative");
    need(ig_epsilon > 0, "ig_epsilon must be positive");
    need(precision == 0 || precision == 32 || precision == 64, "precision must be 32, 64 or 0 (both)");
}

}  // namespace hat
