#pragma once

#include <vector>

#include "hat/inference.hpp"
#include "hat/metrics.hpp"
#include "hat/run_config.hpp"
#include "hat/training.hpp"

// Glue between datasets, models and metrics shared by the command-line tool,
// the acceptance checks and the Python module.

HAT_NS_BEGIN

// Model hyperparameters of a run. Tasks come from the manifest; the temporal
// table covers every condition cap present and the longest recorded scanpath.
HatConfig model_config(const RunConfig& run, const DatasetManifest& manifest);

// Pixels per degree on the canvas: `override_ppd` when positive, else the
// manifest's value times the mean per-axis resize factor.
double canvas_pixels_per_degree(const CanvasDataset& data, double override_ppd = 0);

// Training options of a run; unset Gaussian widths become one degree.
FitOptions fit_options(const RunConfig& run, double canvas_ppd);

// Metric options of a run; unset bandwidth and sigma become one degree.
MetricParams metric_params(const RunConfig& run, double canvas_ppd);

// Records of `manifest` in the coordinates of a height x width canvas.
std::vector<ScanpathRecord> canvas_records(const DatasetManifest& manifest, int height, int width);

struct GenerationRequest {
    GenerationMode mode = GenerationMode::greedy;
    int max_len = 0;  // 0 selects the condition's cap
    double threshold = 0.5;
    int samples = 1;
    std::uint64_t seed = 0;
    bool keep_heatmaps = false;
};

struct GeneratedGroup {
    std::size_t image = 0;  // index into the dataset's images
    std::string task;
    Condition condition = Condition::TP;
    int sample = 0;
    GeneratedScanpath path;  // canvas coordinates
};

// `samples` scanpaths for every (image, task, condition) triple found in the
// dataset's records, in order of first appearance. f_0 is the first fixation
// of the triple's first record. Sample seeds are drawn in order from one
// generator seeded with request.seed.
std::vector<GeneratedGroup> generate_for_dataset(const HatModel& model, const CanvasDataset& data,
                                                 const GenerationRequest& request);

// The generated scanpath as a record in the manifest's image coordinates.
ScanpathRecord to_manifest_record(const GeneratedGroup& group, const CanvasDataset& data);

// The model's map for the next fixation given a history, for conditional
// evaluation on the dataset's canvas. Records must belong to `data`.
NextFixationPredictor model_predictor(const HatModel& model, const CanvasDataset& data);

HAT_NS_END
