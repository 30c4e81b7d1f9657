#pragma once

#include <span>
#include <string>
#include <vector>

#include "hat/model.hpp"

HAT_NS_BEGIN

// Head-averaged attention of one task's query on the peripheral tokens,
// laid out on the P1 grid.
struct ContributionMap {
    int rows = 0;
    int cols = 0;
    std::vector<double> weights;  // row-major, rows * cols
    double peripheral_mass = 0;   // share of attention on peripheral tokens before renormalization

    // Bilinear upsampling by `factor` for display.
    std::vector<double> upsampled(int factor) const;
};

// attention: [heads x N x lambda] with the peripheral tokens first. With
// renormalize the weights sum to 1; otherwise they are the raw head means.
ContributionMap contribution_map(const Tensor& attention, int task, int rows, int cols, bool renormalize = true);

// Rows are fixation steps (history lengths 1, 2, ...). Column 0 is the total
// weight on peripheral tokens, column i the weight on the i-th foveal token.
// Each cell is the mean over the scanpaths that reach it.
struct ContributionMatrix {
    std::vector<std::vector<double>> values;
    std::vector<std::vector<std::size_t>> counts;

    std::size_t rows() const { return values.size(); }
    std::size_t cols() const { return values.empty() ? 0 : values.front().size(); }
    double row_sum(std::size_t r) const;
    std::string to_csv() const;
};

// Last-layer cross-attention of `task` at every step of every scanpath.
// images[i] is the image of scanpaths[i].
ContributionMatrix contribution_matrix(const HatModel& model, std::span<const Tensor> images,
                                       std::span<const std::vector<Fixation>> scanpaths, int task);

// contribution_map averaged over every step of every record of `task`.
ContributionMap category_contribution_map(const HatModel& model, const CanvasDataset& data, const std::string& task,
                                          bool renormalize = true);

HAT_NS_END
