#pragma once

#include <optional>

#include "hat/heuristics.hpp"
#include "hat/model.hpp"

HAT_NS_BEGIN

enum class GenerationMode { greedy, sample };

GenerationMode parse_generation_mode(const std::string& text);
std::string to_string(GenerationMode mode);

struct GenerationPolicy {
    GenerationMode mode = GenerationMode::greedy;
    int max_len = 6;            // fixations after f_0
    double threshold = 0.5;
    std::uint64_t seed = 0;
    bool keep_heatmaps = false;
    // Rebuild everything at every step instead of reusing the pyramid and the
    // foveal tokens already computed. Same results, more work.
    bool naive = false;

    void validate() const;
};

// Autoregressive scanpath. Each step predicts from the current history; the
// scanpath stops when tau exceeds the threshold or once max_len fixations
// follow f_0. f_0 defaults to the canvas centre.
GeneratedScanpath generate(const HatModel& model, const Tensor& image, int task, const GenerationPolicy& policy,
                           std::optional<Fixation> initial = std::nullopt);

// Centre of an H x W canvas.
Fixation canvas_centre(int height, int width);

HAT_NS_END
