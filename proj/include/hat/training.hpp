#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "hat/model.hpp"

HAT_NS_BEGIN

struct TrainingExample {
    std::size_t record = 0;          // index into the manifest's records
    std::size_t image = 0;           // index into the manifest's images
    int task = 0;
    std::size_t history_length = 1;  // fixations f_0 .. f_{history_length - 1}
    bool terminal = false;
    std::optional<Fixation> target;  // f_{history_length}; absent on terminal examples
};

// A record with fixations f_0..f_n gives n examples predicting f_1..f_n from
// their histories, then one terminal example with the full history iff the
// record is terminated.
std::vector<TrainingExample> expand_scanpaths(const DatasetManifest& manifest);

// (#non-terminal) / (#terminal); throws ConfigError without terminal examples.
double compute_omega(std::span<const TrainingExample> examples);

struct LossParams {
    double alpha = 2;
    double beta = 4;
    double omega = 1;
    double sigma_px = 16;
};

inline constexpr double kLossEpsilon = 1e-7;

// Gaussian with value exactly 1 at the rounded fixation pixel, decaying as
// exp(-d^2 / (2 sigma^2)).
Tensor make_gt_heatmap(const Fixation& fixation, int height, int width, double sigma_px);

// Pixel-wise focal loss averaged over H*W. Where Y == 1 the term is
// (1 - p)^alpha log p, elsewhere (1 - Y)^beta p^alpha log(1 - p); the sum is
// negated. Predictions of exactly 0 or 1 are replaced by eps or 1 - eps and
// receive no gradient.
Tensor focal_loss(const Tensor& prediction, const Tensor& target, double alpha = 2, double beta = 4);

// -omega * tau * log p - (1 - tau) * log(1 - p) for a one-element prediction,
// with the same boundary replacement.
Tensor termination_loss(const Tensor& prediction, double tau, double omega);

struct LossComponents {
    Tensor total;
    double fixation = 0;
    double termination = 0;
};

// Loss of one example against its ground-truth task only; terminal examples
// have no fixation term.
LossComponents example_loss(const HatModel& model, const ImageContext& context, const ScanpathRecord& record,
                            const TrainingExample& example, const LossParams& params);
LossComponents total_loss(const HatModel& model, const CanvasDataset& data, const TrainingExample& example,
                          const LossParams& params);

// Adaptive moments with decoupled weight decay.
class AdamW {
public:
    AdamW(NamedParameters parameters, double lr, double weight_decay = 0.01, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8);

    void step();
    void zero_grad();
    std::size_t steps() const { return t_; }
    double lr = 1e-4;
    double weight_decay = 0.01;

private:
    NamedParameters params_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

struct FitOptions {
    int epochs = 30;
    int batch = 32;
    double lr = 1e-4;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    LossParams loss;
    bool compute_omega = true;  // overrides loss.omega with the training-split ratio
};

struct EpochLog {
    int epoch = 0;           // 1-based
    std::size_t step = 0;    // optimizer steps taken so far
    double fixation = 0;     // mean over the epoch's examples
    double termination = 0;
    double total = 0;
    nlohmann::json to_json() const;
};

struct FitResult {
    std::vector<EpochLog> log;
    double omega = 0;
    std::size_t examples = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Shuffled mini-batch training. Within a batch, examples sharing an image reuse
// one pyramid; each example's loss is scaled by 1 / batch size. Throws
// DivergenceError on a non-finite loss.
FitResult fit(HatModel& model, const CanvasDataset& data, const FitOptions& options,
              const EpochCallback& on_epoch = {});

HAT_NS_END
