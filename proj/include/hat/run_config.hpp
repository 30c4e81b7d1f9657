#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

namespace hat {

// Flat set of named run parameters. The
// JSON form has one key per field and rejects unknown keys.
struct RunConfig {
    std::string subcommand;
    std::string manifest;
    std::string checkpoint;
    std::string predictions;
    std::string out_dir = "run";

    int canvas_height = 320;
    int canvas_width = 512;

    int channels = 32;
    int heads = 4;
    int encoder_layers = 3;
    int decoder_layers = 6;
    int mlp_hidden = 512;
    int ffn_hidden = 0;  // 0 selects 4 * channels
    bool freeze_encoder = false;

    double lr = 1e-4;
    double weight_decay = 0.01;
    int epochs = 30;
    int batch = 32;
    std::uint64_t seed = 0;
    double focal_alpha = 2;
    double focal_beta = 4;
    double omega = 0;  // 0 computes the negative/positive ratio over the training split

    std::string mode = "greedy";
    int max_len = 0;  // 0 selects the condition's cap
    double threshold = 0.5;
    int samples = 1;
    bool dump_heatmaps = false;
    bool dump_contributions = false;

    double pixels_per_degree = 0;  // 0 uses the manifest's value
    double bandwidth_px = 0;       // 0 selects one degree
    double sigma_px = 0;           // target and baseline Gaussians; 0 selects one degree
    double match_reward = 1;
    double mismatch_penalty = 0;
    double gap_penalty = 0;
    double ig_epsilon = 1e-16;
    double recall_threshold = 0.5;
    std::string baseline_manifest;  // training split for the cIG baseline

    int precision = 32;  // gradcheck: 32, 64, or 0 for both

    nlohmann::json to_json() const;
    // Overrides fields named in `j`; throws ConfigError on unknown keys or
    // wrongly typed values.
    void apply(const nlohmann::json& j);
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
    void validate() const;
};

}  // namespace hat
