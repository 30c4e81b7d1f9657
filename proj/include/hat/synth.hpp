#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "hat/dataio.hpp"

namespace hat {

// Procedural scenes with rule-generated scanpaths.
//
//   TP: one target blob in the task colour among green distractors. Viewers
//       start at the canvas centre, detour to the nearest unvisited distractor
//       with probability detour_prob per step (at most max_len - 1 detours),
//       then fixate the target and terminate.
//   TA: distractors only. Viewers visit the k highest-contrast blobs in
//       descending contrast, k uniform in [1, #blobs], then terminate.
//   FV: grey salient blobs of varying contrast, visited in descending contrast.
//
// Blob centres are uniform over the canvas, at least 2.5 radii apart.
struct SynthParams {
    std::uint64_t seed = 7;
    int images = 8;
    Condition condition = Condition::TP;
    int canvas_height = 64;
    int canvas_width = 64;
    int subjects = 1;
    int num_tasks = 1;               // search colours; FV always has one task
    double blob_radius = 0;          // 0 selects canvas_width / 12.8
    double pixels_per_degree = 0;    // 0 selects canvas_width / 16
    double detour_prob = 0.2;
    int min_blobs = 2;               // distractors (TP/TA) or salient blobs (FV)
    int max_blobs = 4;
    double jitter_px = 0;            // std of Gaussian jitter on fixations
    int max_len = 0;                 // 0 selects the condition's cap
    std::string id_prefix = "img";

    double resolved_radius() const;
    double resolved_pixels_per_degree() const;
    int resolved_max_len() const;
    nlohmann::json to_json() const;
    static SynthParams from_json(const nlohmann::json& j);
};

// Scanpath length cap excluding the initial fixation: 6 (TP), 10 (TA), 20 (FV).
int default_max_len(Condition condition);

// Search task names, in palette order.
std::string task_colour_name(int task);

// Writes images/, labels/ and manifest.jsonl under out_dir and returns the
// manifest as loaded from disk.
DatasetManifest synth_dataset(const SynthParams& params, const std::filesystem::path& out_dir);

}  // namespace hat
