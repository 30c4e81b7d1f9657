#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace hat {

enum class Condition { TP, TA, FV };

std::string to_string(Condition c);
Condition parse_condition(std::string_view text);

// Pixel location: x is the column, y the row, origin at the top-left corner.
struct Fixation {
    double x = 0;
    double y = 0;
    bool operator==(const Fixation&) const = default;
};

// Channel-major [channels x height x width] raster with values in [0, 1].
struct ImageRaster {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> values;

    float at(int c, int y, int x) const { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    bool operator==(const ImageRaster&) const = default;
};

// Throws ValidationError unless H, W >= 32, channels is 1 or 3 and every value
// lies in [0, 1].
void validate_image(const ImageRaster& image);

struct SemanticLabelMap {
    int height = 0;
    int width = 0;
    std::vector<int> labels;

    int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    bool operator==(const SemanticLabelMap&) const = default;
};

struct ScanpathRecord {
    std::string image;
    std::string task;
    std::string subject;
    Condition condition = Condition::TP;
    std::vector<Fixation> fixations;  // fixations[0] is the initial fixation
    bool terminated = false;
    // Present on generated scanpaths only.
    std::optional<std::vector<double>> termination_probs;
    std::optional<std::string> terminated_by;

    bool operator==(const ScanpathRecord&) const = default;
};

// Generator-side ground truth for a synthetic scene element.
struct SceneObject {
    std::string kind;  // "target", "distractor" or "salient"
    double x = 0;
    double y = 0;
    double radius = 0;
    double contrast = 0;
    bool operator==(const SceneObject&) const = default;
};

struct ImageEntry {
    std::string id;
    std::string raster;  // path relative to the manifest directory
    std::string labels;  // optional label-map path, empty when absent
    int height = 0;
    int width = 0;
    std::vector<SceneObject> objects;
    bool operator==(const ImageEntry&) const = default;
};

// A dataset: a header line followed by one JSON object per scanpath.
//
//   {"manifest": {"version": 1, "pixels_per_degree": 16.0, "tasks": [...],
//                 "labels": {"0": "background", ...}, "images": [...],
//                 "generator": {...}}}
//   {"image": "img000", "task": "red", "subject": "s00", "condition": "TP",
//    "X": [...], "Y": [...], "terminated": true}
//
// Generated scanpaths add "tau" (per-step termination probabilities) and
// "terminated_by". pixels_per_degree is expressed in the coordinates the
// records are stored in.
struct DatasetManifest {
    int version = 1;
    double pixels_per_degree = 16.0;
    std::vector<std::string> tasks;
    std::map<int, std::string> label_names;
    std::vector<ImageEntry> images;
    std::vector<ScanpathRecord> records;
    nlohmann::json generator = nlohmann::json::object();
    std::filesystem::path base_dir;

    std::size_t image_index(const std::string& id) const;
    int task_index(const std::string& task) const;

    bool operator==(const DatasetManifest& o) const {
        return version == o.version && pixels_per_degree == o.pixels_per_degree && tasks == o.tasks &&
               label_names == o.label_names && images == o.images && records == o.records &&
               generator == o.generator;
    }
};

// Checks every invariant eagerly; the error names record index and field.
// With check_files, raster and label-map headers must exist and agree with the
// image entry's declared size.
void validate_manifest(const DatasetManifest& manifest, bool check_files = true);

DatasetManifest parse_manifest(std::istream& is, const std::filesystem::path& base_dir);
DatasetManifest load_manifest(const std::filesystem::path& path);

// Writes the manifest to `path`, rewriting raster paths relative to the new
// directory.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
std::string serialize_record(const ScanpathRecord& record);

// --- rasters -----------------------------------------------------------------

struct PnmHeader {
    char kind = 0;  // '5' (gray) or '6' (rgb)
    int width = 0;
    int height = 0;
    int maxval = 0;
};

PnmHeader read_pnm_header(const std::filesystem::path& path);
ImageRaster read_image(const std::filesystem::path& path);
// 8-bit P6 for 3 channels, P5 for 1.
void write_image(const std::filesystem::path& path, const ImageRaster& image);

SemanticLabelMap read_label_map(const std::filesystem::path& path);
// P5, 8-bit when every id fits, else 16-bit big-endian.
void write_label_map(const std::filesystem::path& path, const SemanticLabelMap& labels);

enum class HeatmapFormat { pgm16, pfm };

// pgm16: "P5\n<W> <H>\n65535\n" then big-endian u16 samples, value =
//        round(65535 * (v - min) / (max - min)); a constant map writes zeros.
// pfm:   "Pf\n<W> <H>\n-1.0\n" then little-endian float32 rows, bottom row first.
void write_heatmap(std::span<const double> map, int height, int width, const std::filesystem::path& path,
                   HeatmapFormat format);
void write_heatmap(std::span<const float> map, int height, int width, const std::filesystem::path& path,
                   HeatmapFormat format);
// Top row first, as stored in memory.
std::vector<float> read_pfm(const std::filesystem::path& path, int& height, int& width);
std::vector<std::uint16_t> read_pgm16(const std::filesystem::path& path, int& height, int& width);

// --- resizing ----------------------------------------------------------------

// Bilinear resize with half-pixel sample positions.
ImageRaster resize_bilinear(const ImageRaster& image, int height, int width);
SemanticLabelMap resize_nearest(const SemanticLabelMap& labels, int height, int width);
std::vector<Fixation> scale_fixations(std::span<const Fixation> fixations, int from_height, int from_width,
                                      int to_height, int to_width);

inline constexpr int kDefaultCanvasHeight = 320;
inline constexpr int kDefaultCanvasWidth = 512;

struct ResizedImage {
    ImageRaster image;
    std::vector<Fixation> fixations;
};

// Resizes to the canvas and scales fixations by the same per-axis factors.
ResizedImage resize_to_canvas(const ImageRaster& image, std::span<const Fixation> fixations,
                              int canvas_height = kDefaultCanvasHeight, int canvas_width = kDefaultCanvasWidth);

// A manifest with every image loaded and resized to one canvas. Records are
// rescaled to canvas coordinates; label maps use nearest-neighbour resizing.
struct CanvasDataset {
    DatasetManifest manifest;
    int height = 0;
    int width = 0;
    std::vector<ImageRaster> images;                       // parallel to manifest.images
    std::vector<std::optional<SemanticLabelMap>> labels;   // parallel to manifest.images
};

CanvasDataset load_canvas_dataset(const DatasetManifest& manifest, int canvas_height, int canvas_width);

}  // namespace hat
