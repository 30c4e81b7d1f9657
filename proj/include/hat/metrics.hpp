#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hat/dataio.hpp"

namespace hat {

// --- scanpath similarity -----------------------------------------------------

struct ClusterAssignment {
    std::vector<int> ids;             // one per clustered fixation
    std::vector<Fixation> centers;
    double bandwidth_px = 0;

    // Nearest centre; ties go to the lower id.
    int assign(const Fixation& f) const;
    std::vector<int> assign(std::span<const Fixation> fixations) const;
};

struct MeanShiftOptions {
    int max_iterations = 300;
    double tolerance = 1e-6;  // stop when a mode moves less than tolerance * bandwidth
};

// Flat-kernel mean shift. Each point is shifted to the mean of all points within
// bandwidth_px (inclusive) until it settles. Modes are visited in input order;
// a mode within bandwidth_px / 2 of an existing centre merges into it, otherwise
// it founds a new centre. Every point is then labelled with its nearest centre.
ClusterAssignment cluster_fixations(std::span<const Fixation> points, double bandwidth_px,
                                    const MeanShiftOptions& options = {});

struct AlignmentParams {
    double match_reward = 1;
    double mismatch_penalty = 0;
    double gap_penalty = 0;

    nlohmann::json to_json() const;
};

struct AlignmentScore {
    double score = 0;
    bool empty = false;  // an input was empty; score is 0
};

// Needleman-Wunsch global alignment score.
AlignmentScore nw_align(std::span<const int> a, std::span<const int> b, const AlignmentParams& params = {});

struct FlaggedValue {
    double value = 0;
    bool flagged = false;
};

// Alignment score of two id strings divided by the longer length.
FlaggedValue normalized_alignment(std::span<const int> a, std::span<const int> b, const AlignmentParams& params = {});

// Every fixation, f_0 included, is mapped through the same clustering.
FlaggedValue sequence_score(std::span<const Fixation> pred, std::span<const Fixation> gt,
                            const ClusterAssignment& clustering, const AlignmentParams& params = {});

// Label of the pixel under a fixation (rounded, clamped to the map).
int label_at(const SemanticLabelMap& labels, const Fixation& f);

// Returns nullopt when no label map is available.
std::optional<FlaggedValue> semantic_sequence_score(std::span<const Fixation> pred, std::span<const Fixation> gt,
                                                    const SemanticLabelMap* labels,
                                                    const AlignmentParams& params = {});

// --- saliency ----------------------------------------------------------------

// Flat index of the pixel under a fixation: round(y) * width + round(x), clamped.
std::size_t pixel_index(const Fixation& f, int height, int width);

// Value of the z-scored map (population std) at the fixation. A map with zero
// variance yields 0, flagged.
FlaggedValue nss(std::span<const double> map, int height, int width, const Fixation& fixation);

// Area under the ROC curve with the map as classifier score: positives are the
// map values under the fixations, negatives every other pixel. Thresholds sweep
// every distinct map value and the curve is integrated with the trapezoid rule,
// which equals the probability that a positive outranks a negative with ties
// counted one half.
double auc_judd(std::span<const double> map, int height, int width, std::span<const Fixation> positives);

inline constexpr double kInfoGainEpsilon = 1e-16;

// log2(eps + p(f)) - log2(eps + q(f)) in bits, with p and q the L1-normalized
// map and baseline.
double info_gain(std::span<const double> map, std::span<const double> baseline, int height, int width,
                 const Fixation& fixation, double eps = kInfoGainEpsilon);

// Unnormalized Gaussian with peak 1 at the rounded fixation pixel.
std::vector<double> gaussian_bump(const Fixation& f, int height, int width, double sigma_px);

// Per-task average of Gaussian-smoothed maps of every fixation after f_0 in
// `records`, L1-normalized. Tasks without such fixations get a uniform map.
std::map<std::string, std::vector<double>> build_baseline_density(std::span<const ScanpathRecord> records,
                                                                  std::span<const std::string> tasks, int height,
                                                                  int width, double sigma_px);

// Map predicted for the next fixation of `record` given its first
// `history_length` fixations, on the record's canvas.
using NextFixationPredictor =
    std::function<std::vector<double>(const ScanpathRecord& record, std::size_t history_length)>;

struct ConditionalStep {
    std::size_t record = 0;
    std::size_t step = 0;  // index of the predicted fixation, >= 1
    double ig = 0;
    double nss = 0;
    bool nss_flagged = false;
    double auc = 0;
};

struct ConditionalResult {
    double cig = 0;
    double cnss = 0;
    double cauc = 0;
    std::size_t steps = 0;
    std::vector<ConditionalStep> per_step;
};

// For each record and each i >= 1, scores predictor(record, i) against f_i.
// Aggregates are means over all steps.
ConditionalResult conditional_eval(std::span<const ScanpathRecord> records, int height, int width,
                                   const NextFixationPredictor& predictor,
                                   const std::map<std::string, std::vector<double>>& baseline);

// --- set-level ---------------------------------------------------------------

// Scanpaths of one (image, task) pair with the clustering used to compare them.
struct ScanpathGroup {
    std::string image;
    std::string task;
    std::vector<std::vector<Fixation>> ground_truth;
    std::vector<std::vector<Fixation>> predictions;
    ClusterAssignment clustering;
    const SemanticLabelMap* labels = nullptr;
};

struct RecallResult {
    double recall = 0;
    std::size_t groups = 0;
};

// Per group: fraction of ground-truth scanpaths whose best SS against any
// prediction exceeds threshold; then the mean over groups with predictions.
RecallResult scanpath_recall(std::span<const ScanpathGroup> groups, double threshold,
                             const AlignmentParams& params = {});

struct ConsistencyResult {
    double value = 0;
    std::size_t groups = 0;
    std::size_t skipped = 0;  // groups with fewer than two scanpaths
};

// Mean SS over unordered pairs of ground-truth scanpaths, then over groups.
ConsistencyResult human_consistency(std::span<const ScanpathGroup> groups, const AlignmentParams& params = {});

struct MetricParams {
    AlignmentParams alignment;
    double bandwidth_px = 0;      // 0 selects one degree of visual angle
    double sigma_px = 0;          // baseline smoothing; 0 selects one degree
    double recall_threshold = 0.5;
    double ig_epsilon = kInfoGainEpsilon;

    nlohmann::json to_json() const;
};

struct GroupScores {
    std::string image;
    std::string task;
    std::size_t ground_truth = 0;
    std::size_t predictions = 0;
    std::optional<double> ss;
    std::optional<double> semss;
};

struct MetricReport {
    MetricParams params;
    std::vector<GroupScores> groups;
    std::optional<double> ss;
    std::optional<double> semss;
    std::optional<ConditionalResult> conditional;
    std::optional<RecallResult> recall;
    std::optional<ConsistencyResult> consistency;

    nlohmann::json to_json() const;
    // Header "SemSS,SS,cIG,cNSS,cAUC,recall,HC" and one row; absent values are empty.
    std::string to_csv() const;
};

// Groups ground truth and predictions by (image, task) and clusters each
// group's ground-truth fixations. Predictions whose (image, task) pair has no
// ground truth are ignored.
std::vector<ScanpathGroup> group_scanpaths(const CanvasDataset& ground_truth,
                                           std::span<const ScanpathRecord> predictions, double bandwidth_px);

// SS and SemSS of every prediction against every ground-truth scanpath of its
// group, averaged per group and then over groups; plus recall and human
// consistency.
MetricReport evaluate_scanpaths(std::span<const ScanpathGroup> groups, const MetricParams& params);

}  // namespace hat
