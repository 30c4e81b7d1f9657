#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hat/dataio.hpp"
#include "hat/errors.hpp"
#include "hat/rng.hpp"

namespace hat {

enum class TerminatedBy { threshold, cap };

std::string to_string(TerminatedBy t);

struct GeneratedScanpath {
    std::vector<Fixation> fixations;            // f_0 .. f_m
    std::vector<double> termination_probs;      // one per model evaluation
    std::vector<std::vector<float>> heatmaps;   // per-step maps when retained
    TerminatedBy terminated_by = TerminatedBy::cap;

    ScanpathRecord to_record(const std::string& image, const std::string& task, const std::string& subject,
                             Condition condition) const;
};

// Location of the largest value of a row-major [height x width] map, as integer
// pixel coordinates. Ties go to the smallest row, then the smallest column.
template <typename T>
Fixation argmax_pixel(std::span<const T> map, int height, int width) {
    if (map.empty() || map.size() != static_cast<std::size_t>(height) * width) {
        throw ArgumentError("argmax_pixel: map must be non-empty and height*width long");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < map.size(); ++i) {
        if (map[i] > map[best]) best = i;
    }
    return {static_cast<double>(best % width), static_cast<double>(best / width)};
}

// Draws a pixel with probability proportional to its (nonnegative) value.
Fixation sample_pixel(std::span<const float> map, int height, int width, Rng& rng);
Fixation sample_pixel(std::span<const double> map, int height, int width, Rng& rng);

// Winner-take-all on a static density: take the argmax, zero a disk of
// ior_radius_px around it, repeat max_len times. With `initial`, the path
// starts there and the initial location is not suppressed.
GeneratedScanpath heuristic_wta(std::span<const double> density, int height, int width, double ior_radius_px,
                                int max_len, std::optional<Fixation> initial = std::nullopt);

}  // namespace hat
