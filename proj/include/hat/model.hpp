#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hat/dataio.hpp"
#include "hat/nn.hpp"

HAT_NS_BEGIN

struct HatConfig {
    int canvas_height = 320;
    int canvas_width = 512;
    int channels = 32;
    int heads = 4;
    int encoder_layers = 3;
    int decoder_layers = 6;
    int mlp_hidden = 512;
    int ffn_hidden = 0;  // 0 selects 4 * channels
    int max_len = 6;     // temporal embeddings cover fixation indices 0..max_len
    bool freeze_encoder = false;
    bool low_res_head = false;  // dot-product head against P2 instead of P4
    std::uint64_t seed = 0;
    std::vector<std::string> task_names = {"freeview"};

    int num_tasks() const { return static_cast<int>(task_names.size()); }
    int ffn_width() const { return ffn_hidden > 0 ? ffn_hidden : 4 * channels; }
    int peripheral_rows() const { return canvas_height / 32; }
    int peripheral_cols() const { return canvas_width / 32; }
    int peripheral_tokens() const { return peripheral_rows() * peripheral_cols(); }
    void validate() const;
    nlohmann::json to_json() const;
    static HatConfig from_json(const nlohmann::json& j);
};

// P1..P4 at strides 32, 16, 8, 4, all with `channels` maps.
struct FeaturePyramid {
    Tensor p1, p2, p3, p4;
};

// Fixed 2D sinusoidal table. Row (i, j) is the 1D encoding of the column j
// followed by the 1D encoding of the row i, each C/2 wide with interleaved
// sin/cos pairs: e[2m] = sin(p / 10000^(2m / (C/2))), e[2m+1] = cos(...).
// Stored per axis; materialize() expands the full [H x W x C] tensor.
class SpatialEmbeddingTable {
public:
    SpatialEmbeddingTable() = default;
    SpatialEmbeddingTable(int height, int width, int channels);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }

    // G[row, col] as a C-vector.
    std::vector<Scalar> at(int row, int col) const;
    // Embeddings of cells of a stride-S map: G[floor(i*S), floor(j*S)] -> [k x C].
    Tensor lookup(std::span<const PixelIndex> cells, int stride) const;
    // Every cell of an h x w stride-S map in row-major order.
    Tensor grid(int rows, int cols, int stride) const;
    Tensor materialize() const;

private:
    int height_ = 0, width_ = 0, channels_ = 0;
    std::vector<Scalar> x_;  // [width x C/2]
    std::vector<Scalar> y_;  // [height x C/2]
};

struct WorkingMemory {
    Tensor peripheral;  // [n_p x C]
    Tensor foveal;      // [k x C]; undefined when k == 0
    std::int64_t peripheral_count() const { return peripheral.dim(0); }
    std::int64_t foveal_count() const { return foveal.defined() ? foveal.dim(0) : 0; }
    std::int64_t size() const { return peripheral_count() + foveal_count(); }
    // Peripheral tokens first, then foveal tokens in fixation order.
    Tensor tokens() const;
};

struct PredictionSet {
    Tensor heatmaps;          // [N x H x W], in [0, 1]
    Tensor terminations;      // [N x 1], in (0, 1)
    Tensor cross_attention;   // [heads x N x lambda], last decoder layer
    std::vector<Tensor> encoder_attention;         // per layer [heads x lambda x lambda]
    std::vector<Tensor> decoder_self_attention;    // per layer [heads x N x N]
    std::vector<Tensor> decoder_cross_attention;   // per layer [heads x N x lambda]
};

struct TaskOutput {
    Tensor heatmap;      // [H x W]
    Tensor termination;  // [1]
    Tensor attention;    // [heads x lambda], last cross-attention row of the task
    PredictionSet all;
};

// Per-image state reused across the steps of one scanpath.
struct ImageContext {
    FeaturePyramid pyramid;
    Tensor peripheral;  // peripheral tokens, embeddings included
};

// P4 cell of a fixation: (round(y / 4), round(x / 4)), clamped to the map.
PixelIndex foveal_cell(const Fixation& f, int p4_rows, int p4_cols);

// [3 x H x W] tensor of an image; 1-channel rasters are replicated.
Tensor image_tensor(const ImageRaster& image);

class EncoderLayer {
public:
    EncoderLayer() = default;
    EncoderLayer(int dim, int heads, int ffn, Rng& rng);
    Tensor forward(const Tensor& x, Tensor* attention = nullptr) const;
    void collect(const std::string& prefix, NamedParameters& out) const;

    LayerNorm norm_attn, norm_ffn;
    MultiHeadAttention attn;
    FeedForward ffn;
};

// Cross-attention, then self-attention among the queries, then the FFN; each
// sub-layer is pre-normalized and residual.
class DecoderLayer {
public:
    DecoderLayer() = default;
    DecoderLayer(int dim, int heads, int ffn, Rng& rng);
    Tensor forward(const Tensor& queries, const Tensor& memory, Tensor* cross_attention = nullptr,
                   Tensor* self_attention = nullptr) const;
    void collect(const std::string& prefix, NamedParameters& out) const;

    LayerNorm norm_cross, norm_self, norm_ffn;
    MultiHeadAttention cross, self;
    FeedForward ffn;
};

class HatModel {
public:
    explicit HatModel(HatConfig config);

    const HatConfig& config() const { return config_; }
    const SpatialEmbeddingTable& spatial_table() const { return table_; }

    FeaturePyramid extract_pyramid(const Tensor& image) const;
    FeaturePyramid extract_pyramid(const ImageRaster& image) const { return extract_pyramid(image_tensor(image)); }

    Tensor peripheral_tokens(const FeaturePyramid& pyramid) const;
    // Foveal token of fixation number `index` (0-based) at `f`.
    Tensor foveal_tokens(const FeaturePyramid& pyramid, std::span<const Fixation> fixations,
                         std::size_t first_index = 0) const;
    WorkingMemory build_working_memory(const FeaturePyramid& pyramid, std::span<const Fixation> fixations) const;

    Tensor encode_memory(const Tensor& tokens, std::vector<Tensor>* attention = nullptr) const;
    // Runs the decoder stack on `queries`; returns updated queries and stores the
    // last layer's cross-attention in `cross_attention`.
    Tensor aggregate(const Tensor& queries, const Tensor& memory, Tensor* cross_attention = nullptr,
                     std::vector<Tensor>* all_cross = nullptr, std::vector<Tensor>* all_self = nullptr) const;
    // Heatmaps [N x H x W] and terminations [N x 1] from updated queries.
    void predict(const Tensor& updated_queries, const FeaturePyramid& pyramid, Tensor& heatmaps,
                 Tensor& terminations) const;

    ImageContext prepare(const Tensor& image) const;
    // Everything downstream of the pyramid for one fixation history. When
    // `foveal` is given it must hold the foveal tokens of `fixations`.
    PredictionSet predict_from(const ImageContext& context, std::span<const Fixation> fixations,
                               const Tensor* foveal = nullptr) const;
    PredictionSet forward_all(const Tensor& image, std::span<const Fixation> fixations) const;
    TaskOutput forward(const Tensor& image, std::span<const Fixation> fixations, int task) const;
    TaskOutput forward(const ImageRaster& image, std::span<const Fixation> fixations, int task) const {
        return forward(image_tensor(image), fixations, task);
    }

    // Every learnable tensor under a stable dotted name.
    NamedParameters parameters() const;
    // Parameters updated by training (excludes the pixel encoder when frozen).
    NamedParameters trainable_parameters() const;
    std::size_t parameter_count() const;
    int task_index(const std::string& task) const;

    void save(const std::filesystem::path& path) const;
    static HatModel load(const std::filesystem::path& path);

    // Components, public for tests and diagnostics.
    std::vector<Conv2d> encoder_convs;  // 5 stride-2 stages
    Conv2d lateral5, lateral4, lateral3, lateral2;
    Conv2d smooth2, smooth3, smooth4;
    Tensor scale_embedding;     // [2 x C]: row 0 peripheral, row 1 foveal
    Tensor temporal_embedding;  // [(max_len + 1) x C]
    std::vector<EncoderLayer> encoder;
    LayerNorm encoder_norm;
    Tensor queries;  // [N x C]
    std::vector<DecoderLayer> decoder;
    LayerNorm decoder_norm;
    Linear mlp1, mlp2, mlp3;
    Linear termination;

private:
    HatConfig config_;
    SpatialEmbeddingTable table_;
};

HAT_NS_END
