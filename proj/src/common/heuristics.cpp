#include "hat/heuristics.hpp"

#include <algorithm>
#include <cmath>

namespace hat {

std::string to_string(TerminatedBy t) { return t == TerminatedBy::threshold ? "threshold" : "cap"; }

ScanpathRecord GeneratedScanpath::to_record(const std::string& image, const std::string& task,
                                            const std::string& subject, Condition condition) const {
    ScanpathRecord r;
    r.image = image;
    r.task = task;
    r.subject = subject;
    r.condition = condition;
    r.fixations = fixations;
    r.terminated = terminated_by == TerminatedBy::threshold;
    r.termination_probs = termination_probs;
    r.terminated_by = to_string(terminated_by);
    return r;
}

namespace {

template <typename T>
Fixation sample_impl(std::span<const T> map, int height, int width, Rng& rng) {
    if (map.size() != static_cast<std::size_t>(height) * width || map.empty()) {
        throw ArgumentError("sample_pixel: map must be non-empty and height*width long");
    }
    double total = 0;
    for (T v : map) {
        if (!(v >= 0) || !std::isfinite(static_cast<double>(v))) {
            throw ArgumentError("sample_pixel: map values must be finite and nonnegative");
        }
        total += v;
    }
    if (total <= 0) throw ArgumentError("sample_pixel: map has zero mass");
    const double u = rng.uniform() * total;
    double acc = 0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (map[i] <= 0) continue;
        acc += map[i];
        last_positive = i;
        if (u < acc) return {static_cast<double>(i % width), static_cast<double>(i / width)};
    }
    return {static_cast<double>(last_positive % width), static_cast<double>(last_positive / width)};
}

}  // namespace

Fixation sample_pixel(std::span<const float> map, int height, int width, Rng& rng) {
    return sample_impl(map, height, width, rng);
}

Fixation sample_pixel(std::span<const double> map, int height, int width, Rng& rng) {
    return sample_impl(map, height, width, rng);
}

GeneratedScanpath heuristic_wta(std::span<const double> density, int height, int width, double ior_radius_px,
                                int max_len, std::optional<Fixation> initial) {
    if (max_len < 1) throw ArgumentError("heuristic_wta: max_len must be >= 1");
    if (density.size() != static_cast<std::size_t>(height) * width) {
        throw ArgumentError("heuristic_wta: density must be height*width long");
    }
    for (double v : density) {
        if (!(v >= 0)) throw ArgumentError("heuristic_wta: density must be nonnegative");
    }
    std::vector<double> map(density.begin(), density.end());
    GeneratedScanpath path;
    if (initial) path.fixations.push_back(*initial);
    const double r2 = ior_radius_px * ior_radius_px;
    for (int step = 0; step < max_len; ++step) {
        const Fixation f = argmax_pixel<double>(map, height, width);
        path.fixations.push_back(f);
        for (int y = 0; y < height; ++y) {
            const double dy = y - f.y;
            for (int x = 0; x < width; ++x) {
                const double dx = x - f.x;
                if (dx * dx + dy * dy <= r2) map[static_cast<std::size_t>(y) * width + x] = 0;
            }
        }
    }
    path.terminated_by = TerminatedBy::cap;
    return path;
}

}  // namespace hat
