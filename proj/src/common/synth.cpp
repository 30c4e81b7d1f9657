#include "hat/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "hat/errors.hpp"
#include "hat/rng.hpp"

namespace hat {

namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<const char*, 4> kTaskNames = {"red", "blue", "yellow", "magenta"};
constexpr std::array<Rgb, 4> kTaskColours = {{{0.95, 0.15, 0.10}, {0.15, 0.30, 0.95}, {0.95, 0.90, 0.10},
                                              {0.90, 0.20, 0.90}}};
constexpr Rgb kDistractorColour = {0.20, 0.75, 0.25};
constexpr Rgb kSalientColour = {0.95, 0.95, 0.95};
constexpr double kBackground = 0.1;

enum LabelId { kBackgroundLabel = 0, kTargetLabel = 1, kDistractorLabel = 2, kSalientLabel = 3 };

struct Blob {
    SceneObject object;
    Rgb colour;
    int label;
};

double dist(double ax, double ay, double bx, double by) { return std::hypot(ax - bx, ay - by); }

std::vector<Blob> place_blobs(Rng& rng, const SynthParams& p, int count, double radius) {
    std::vector<Blob> blobs;
    for (int i = 0; i < count; ++i) {
        double x = 0, y = 0;
        for (int attempt = 0; attempt < 1000; ++attempt) {
            x = rng.uniform(0, p.canvas_width);
            y = rng.uniform(0, p.canvas_height);
            bool ok = true;
            for (const auto& b : blobs) ok = ok && dist(x, y, b.object.x, b.object.y) >= 2.5 * radius;
            if (ok) break;
        }
        Blob b;
        b.object.x = x;
        b.object.y = y;
        b.object.radius = radius;
        blobs.push_back(b);
    }
    return blobs;
}

void render(const std::vector<Blob>& blobs, Rng& rng, const SynthParams& p, ImageRaster& img,
            SemanticLabelMap& labels) {
    const int H = p.canvas_height, W = p.canvas_width;
    img = ImageRaster{H, W, 3, std::vector<float>(static_cast<std::size_t>(3) * H * W)};
    labels = SemanticLabelMap{H, W, std::vector<int>(static_cast<std::size_t>(H) * W, kBackgroundLabel)};
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (std::size_t i = 0; i < img.values.size(); ++i) {
        img.values[i] = static_cast<float>(kBackground + rng.uniform(-0.04, 0.04));
    }
    for (const auto& b : blobs) {
        const auto& o = b.object;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double d = dist(x + 0.5, y + 0.5, o.x, o.y);
                const double profile = std::clamp(o.radius + 0.5 - d, 0.0, 1.0);
                if (profile <= 0) continue;
                const std::size_t p_idx = static_cast<std::size_t>(y) * W + x;
                for (int c = 0; c < 3; ++c) {
                    float& v = img.values[c * plane + p_idx];
                    const double target = kBackground + (b.colour[c] - kBackground) * o.contrast;
                    v = static_cast<float>(v + (target - v) * profile);
                }
                if (d <= o.radius) labels.labels[p_idx] = b.label;
            }
        }
    }
}

Fixation jittered(Rng& rng, const SynthParams& p, double x, double y) {
    if (p.jitter_px > 0) {
        x += p.jitter_px * rng.normal();
        y += p.jitter_px * rng.normal();
    }
    // Keep strictly inside [0, W) x [0, H).
    x = std::clamp(x, 0.0, std::nextafter(static_cast<double>(p.canvas_width), 0.0));
    y = std::clamp(y, 0.0, std::nextafter(static_cast<double>(p.canvas_height), 0.0));
    return {x, y};
}

}  // namespace

int default_max_len(Condition condition) {
    switch (condition) {
        case Condition::TP: return 6;
        case Condition::TA: return 10;
        case Condition::FV: return 20;
    }
    return 6;
}

std::string task_colour_name(int task) {
    if (task < 0 || task >= static_cast<int>(kTaskNames.size())) throw ArgumentError("task index out of range");
    return kTaskNames[task];
}

double SynthParams::resolved_radius() const { return blob_radius > 0 ? blob_radius : canvas_width / 12.8; }

double SynthParams::resolved_pixels_per_degree() const {
    return pixels_per_degree > 0 ? pixels_per_degree : canvas_width / 16.0;
}

int SynthParams::resolved_max_len() const { return max_len > 0 ? max_len : default_max_len(condition); }

nlohmann::json SynthParams::to_json() const {
    return {{"seed", seed},
            {"images", images},
            {"condition", to_string(condition)},
            {"canvas_height", canvas_height},
            {"canvas_width", canvas_width},
            {"subjects", subjects},
            {"num_tasks", num_tasks},
            {"blob_radius", resolved_radius()},
            {"pixels_per_degree", resolved_pixels_per_degree()},
            {"detour_prob", detour_prob},
            {"min_blobs", min_blobs},
            {"max_blobs", max_blobs},
            {"jitter_px", jitter_px},
            {"max_len", resolved_max_len()},
            {"id_prefix", id_prefix}};
}

SynthParams SynthParams::from_json(const nlohmann::json& j) {
    SynthParams p;
    p.seed = j.value("seed", p.seed);
    p.images = j.value("images", p.images);
    p.condition = parse_condition(j.value("condition", to_string(p.condition)));
    p.canvas_height = j.value("canvas_height", p.canvas_height);
    p.canvas_width = j.value("canvas_width", p.canvas_width);
    p.subjects = j.value("subjects", p.subjects);
    p.num_tasks = j.value("num_tasks", p.num_tasks);
    p.blob_radius = j.value("blob_radius", p.blob_radius);
    p.pixels_per_degree = j.value("pixels_per_degree", p.pixels_per_degree);
    p.detour_prob = j.value("detour_prob", p.detour_prob);
    p.min_blobs = j.value("min_blobs", p.min_blobs);
    p.max_blobs = j.value("max_blobs", p.max_blobs);
    p.jitter_px = j.value("jitter_px", p.jitter_px);
    p.max_len = j.value("max_len", p.max_len);
    p.id_prefix = j.value("id_prefix", p.id_prefix);
    return p;
}

DatasetManifest synth_dataset(const SynthParams& p, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    if (p.images < 0 || p.subjects < 1) throw ArgumentError("synth: images must be >= 0 and subjects >= 1");
    if (p.canvas_height < 32 || p.canvas_width < 32) throw ArgumentError("synth: canvas must be at least 32x32");
    if (p.num_tasks < 1 || p.num_tasks > static_cast<int>(kTaskNames.size())) {
        throw ArgumentError("synth: num_tasks must be in [1, " + std::to_string(kTaskNames.size()) + "]");
    }
    if (p.min_blobs < 1 || p.max_blobs < p.min_blobs) throw ArgumentError("synth: need 1 <= min_blobs <= max_blobs");
    if (!(p.detour_prob >= 0 && p.detour_prob <= 1)) throw ArgumentError("synth: detour_prob must be in [0, 1]");
    const int cap = p.resolved_max_len();
    if (cap < 1) throw ArgumentError("synth: max_len must be >= 1");

    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "labels");

    DatasetManifest m;
    m.base_dir = out_dir;
    m.pixels_per_degree = p.resolved_pixels_per_degree();
    if (p.condition == Condition::FV) {
        m.tasks = {"freeview"};
    } else {
        for (int t = 0; t < p.num_tasks; ++t) m.tasks.push_back(kTaskNames[t]);
    }
    m.label_names = {{kBackgroundLabel, "background"},
                     {kTargetLabel, "target"},
                     {kDistractorLabel, "distractor"},
                     {kSalientLabel, "salient"}};
    m.generator = p.to_json();
    switch (p.condition) {
        case Condition::TP:
            m.generator["rule"] = "centre start; nearest-distractor detours w.p. detour_prob; target; terminate";
            break;
        case Condition::TA:
            m.generator["rule"] = "centre start; k highest-contrast blobs in contrast order, k ~ U[1, n]; terminate";
            break;
        case Condition::FV:
            m.generator["rule"] = "centre start; all salient blobs in contrast order; terminate";
            break;
    }

    Rng rng(p.seed);
    const double radius = p.resolved_radius();
    const Fixation centre{p.canvas_width / 2.0, p.canvas_height / 2.0};
    for (int i = 0; i < p.images; ++i) {
        char id_buf[32];
        std::snprintf(id_buf, sizeof id_buf, "%03d", i);
        const std::string id = p.id_prefix + id_buf;
        const int n_blobs = p.min_blobs + static_cast<int>(rng.index(static_cast<std::size_t>(p.max_blobs - p.min_blobs + 1)));
        const int task = p.condition == Condition::FV ? 0 : static_cast<int>(rng.index(static_cast<std::size_t>(p.num_tasks)));
        const bool has_target = p.condition == Condition::TP;

        auto blobs = place_blobs(rng, p, n_blobs + (has_target ? 1 : 0), radius);
        for (std::size_t b = 0; b < blobs.size(); ++b) {
            auto& blob = blobs[b];
            if (has_target && b == 0) {
                blob.object.kind = "target";
                blob.object.contrast = rng.uniform(0.8, 1.0);
                blob.colour = kTaskColours[task];
                blob.label = kTargetLabel;
            } else if (p.condition == Condition::FV) {
                blob.object.kind = "salient";
                blob.object.contrast = rng.uniform(0.3, 1.0);
                blob.colour = kSalientColour;
                blob.label = kSalientLabel;
            } else {
                blob.object.kind = "distractor";
                blob.object.contrast = rng.uniform(0.5, 1.0);
                blob.colour = kDistractorColour;
                blob.label = kDistractorLabel;
            }
        }

        ImageRaster img;
        SemanticLabelMap labels;
        render(blobs, rng, p, img, labels);
        write_image(out_dir / "images" / (id + ".ppm"), img);
        write_label_map(out_dir / "labels" / (id + ".pgm"), labels);

        ImageEntry entry;
        entry.id = id;
        entry.raster = "images/" + id + ".ppm";
        entry.labels = "labels/" + id + ".pgm";
        entry.height = p.canvas_height;
        entry.width = p.canvas_width;
        for (const auto& b : blobs) entry.objects.push_back(b.object);
        m.images.push_back(entry);

        // Non-target blobs sorted by descending contrast, ties by index.
        std::vector<std::size_t> others;
        for (std::size_t b = has_target ? 1 : 0; b < blobs.size(); ++b) others.push_back(b);
        std::stable_sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) {
            return blobs[a].object.contrast > blobs[b].object.contrast;
        });

        for (int s = 0; s < p.subjects; ++s) {
            char sub_buf[16];
            std::snprintf(sub_buf, sizeof sub_buf, "s%02d", s);
            ScanpathRecord rec;
            rec.image = id;
            rec.task = m.tasks[static_cast<std::size_t>(task)];
            rec.subject = sub_buf;
            rec.condition = p.condition;
            rec.fixations.push_back(centre);
            rec.terminated = true;
            if (p.condition == Condition::TP) {
                std::vector<bool> visited(blobs.size(), false);
                Fixation cur = centre;
                int detours = 0;
                while (detours < n_blobs && detours < cap - 1 && rng.uniform() < p.detour_prob) {
                    std::size_t best = 0;
                    double best_d = 1e300;
                    for (std::size_t b = 1; b < blobs.size(); ++b) {
                        if (visited[b]) continue;
                        const double d = dist(cur.x, cur.y, blobs[b].object.x, blobs[b].object.y);
                        if (d < best_d) best_d = d, best = b;
                    }
                    visited[best] = true;
                    cur = {blobs[best].object.x, blobs[best].object.y};
                    rec.fixations.push_back(jittered(rng, p, cur.x, cur.y));
                    ++detours;
                }
                rec.fixations.push_back(jittered(rng, p, blobs[0].object.x, blobs[0].object.y));
            } else {
                int k = static_cast<int>(others.size());
                if (p.condition == Condition::TA) k = 1 + static_cast<int>(rng.index(others.size()));
                k = std::min(k, cap);
                for (int v = 0; v < k; ++v) {
                    const auto& o = blobs[others[static_cast<std::size_t>(v)]].object;
                    rec.fixations.push_back(jittered(rng, p, o.x, o.y));
                }
            }
            m.records.push_back(std::move(rec));
        }
    }
    const fs::path manifest_path = out_dir / "manifest.jsonl";
    save_manifest(m, manifest_path);
    return load_manifest(manifest_path);
}

}  // namespace hat
