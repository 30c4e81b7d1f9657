#include "hat/interpret.hpp"

#include <cstdio>

#include "hat/errors.hpp"

HAT_NS_BEGIN

std::vector<double> ContributionMap::upsampled(int factor) const {
    std::vector<Scalar> data(weights.begin(), weights.end());
    const Tensor up = bilinear_upsample(Tensor({1, rows, cols}, std::move(data)), factor);
    return {up.values().begin(), up.values().end()};
}

namespace {

// Head mean of the task's attention row, length lambda.
std::vector<double> head_mean(const Tensor& attention, int task) {
    if (attention.rank() != 3) throw DimensionError("contribution: attention must be [heads x N x lambda]");
    const auto heads = attention.dim(0), N = attention.dim(1), lambda = attention.dim(2);
    if (task < 0 || task >= N) throw ArgumentError("contribution: task out of range");
    std::vector<double> out(static_cast<std::size_t>(lambda), 0.0);
    const auto v = attention.values();
    for (std::int64_t h = 0; h < heads; ++h) {
        for (std::int64_t j = 0; j < lambda; ++j) out[static_cast<std::size_t>(j)] += v[static_cast<std::size_t>((h * N + task) * lambda + j)];
    }
    for (double& x : out) x /= static_cast<double>(heads);
    return out;
}

}  // namespace

ContributionMap contribution_map(const Tensor& attention, int task, int rows, int cols, bool renormalize) {
    const auto mean = head_mean(attention, task);
    const auto n = static_cast<std::size_t>(rows) * cols;
    if (rows <= 0 || cols <= 0 || mean.size() < n) {
        throw DimensionError("contribution_map: memory holds fewer tokens than the peripheral grid");
    }
    ContributionMap m;
    m.rows = rows;
    m.cols = cols;
    m.weights.assign(mean.begin(), mean.begin() + static_cast<std::ptrdiff_t>(n));
    for (double w : m.weights) m.peripheral_mass += w;
    if (renormalize && m.peripheral_mass > 0) {
        for (double& w : m.weights) w /= m.peripheral_mass;
    }
    return m;
}

double ContributionMatrix::row_sum(std::size_t r) const {
    double s = 0;
    for (std::size_t c = 0; c < values[r].size(); ++c) {
        if (counts[r][c] > 0) s += values[r][c];
    }
    return s;
}

std::string ContributionMatrix::to_csv() const {
    std::string out = "step,peripheral";
    for (std::size_t c = 1; c < cols(); ++c) out += ",foveal_" + std::to_string(c);
    out += "\n";
    char buf[32];
    for (std::size_t r = 0; r < rows(); ++r) {
        out += std::to_string(r);
        for (std::size_t c = 0; c < cols(); ++c) {
            out += ",";
            if (counts[r][c] > 0) {
                std::snprintf(buf, sizeof buf, "%.9g", values[r][c]);
                out += buf;
            }
        }
        out += "\n";
    }
    return out;
}

ContributionMatrix contribution_matrix(const HatModel& model, std::span<const Tensor> images,
                                       std::span<const std::vector<Fixation>> scanpaths, int task) {
    if (scanpaths.empty()) throw ArgumentError("contribution_matrix: need at least one scanpath");
    if (images.size() != scanpaths.size()) throw ArgumentError("contribution_matrix: one image per scanpath");
    std::size_t longest = 0;
    for (const auto& s : scanpaths) longest = std::max(longest, s.size());
    const std::size_t n_p = static_cast<std::size_t>(model.config().peripheral_tokens());

    ContributionMatrix m;
    m.values.assign(longest, std::vector<double>(longest + 1, 0.0));
    m.counts.assign(longest, std::vector<std::size_t>(longest + 1, 0));
    for (std::size_t s = 0; s < scanpaths.size(); ++s) {
        const ImageContext ctx = model.prepare(images[s]);
        const auto& path = scanpaths[s];
        for (std::size_t step = 1; step <= path.size(); ++step) {
            const PredictionSet out = model.predict_from(ctx, std::span<const Fixation>(path.data(), step));
            const auto mean = head_mean(out.cross_attention, task);
            const std::size_t r = step - 1;
            double peripheral = 0;
            for (std::size_t j = 0; j < n_p; ++j) peripheral += mean[j];
            m.values[r][0] += peripheral;
            m.counts[r][0] += 1;
            for (std::size_t i = 0; i < step; ++i) {
                m.values[r][i + 1] += mean[n_p + i];
                m.counts[r][i + 1] += 1;
            }
        }
    }
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            if (m.counts[r][c] > 0) m.values[r][c] /= static_cast<double>(m.counts[r][c]);
        }
    }
    return m;
}

ContributionMap category_contribution_map(const HatModel& model, const CanvasDataset& data, const std::string& task,
                                          bool renormalize) {
    const int t = model.task_index(task);
    const int rows = model.config().peripheral_rows(), cols = model.config().peripheral_cols();
    ContributionMap total;
    total.rows = rows;
    total.cols = cols;
    total.weights.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    std::size_t steps = 0;
    for (const auto& rec : data.manifest.records) {
        if (rec.task != task) continue;
        const ImageContext ctx = model.prepare(image_tensor(data.images.at(data.manifest.image_index(rec.image))));
        for (std::size_t step = 1; step <= rec.fixations.size(); ++step) {
            const PredictionSet out = model.predict_from(ctx, std::span<const Fixation>(rec.fixations.data(), step));
            const ContributionMap m = contribution_map(out.cross_attention, t, rows, cols, renormalize);
            for (std::size_t i = 0; i < m.weights.size(); ++i) total.weights[i] += m.weights[i];
            total.peripheral_mass += m.peripheral_mass;
            ++steps;
        }
    }
    if (steps == 0) throw ArgumentError("category_contribution_map: no records for task '" + task + "'");
    for (double& w : total.weights) w /= static_cast<double>(steps);
    total.peripheral_mass /= static_cast<double>(steps);
    return total;
}

HAT_NS_END
