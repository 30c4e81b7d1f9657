#include "hat/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "hat/errors.hpp"
#include "hat/snapshot.hpp"

HAT_NS_BEGIN

// --- config ----------------------------------------------------------------------

void HatConfig::validate() const {
    auto need = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    need(canvas_height >= 32 && canvas_width >= 32 && canvas_height % 32 == 0 && canvas_width % 32 == 0,
         "canvas " + std::to_string(canvas_height) + "x" + std::to_string(canvas_width) +
             " must be at least 32x32 with both sides divisible by 32 (resize first)");
    need(channels > 0 && channels % 4 == 0, "channels must be a positive multiple of 4");
    need(heads > 0 && channels % heads == 0,
         "channels " + std::to_string(channels) + " not divisible by " + std::to_string(heads) + " heads");
    need(encoder_layers >= 0 && decoder_layers >= 1, "need encoder_layers >= 0 and decoder_layers >= 1");
    need(mlp_hidden > 0 && ffn_hidden >= 0, "mlp_hidden must be positive");
    need(max_len >= 1, "max_len must be >= 1");
    need(!task_names.empty(), "at least one task is required");
}

nlohmann::json HatConfig::to_json() const {
    return {{"canvas_height", canvas_height}, {"canvas_width", canvas_width},   {"channels", channels},
            {"heads", heads},                 {"encoder_layers", encoder_layers}, {"decoder_layers", decoder_layers},
            {"mlp_hidden", mlp_hidden},       {"ffn_hidden", ffn_width()},        {"max_len", max_len},
            {"freeze_encoder", freeze_encoder}, {"low_res_head", low_res_head},   {"seed", seed},
            {"task_names", task_names}};
}

HatConfig HatConfig::from_json(const nlohmann::json& j) {
    HatConfig c;
    try {
        c.canvas_height = j.at("canvas_height").get<int>();
        c.canvas_width = j.at("canvas_width").get<int>();
        c.channels = j.at("channels").get<int>();
        c.heads = j.at("heads").get<int>();
        c.encoder_layers = j.at("encoder_layers").get<int>();
        c.decoder_layers = j.at("decoder_layers").get<int>();
        c.mlp_hidden = j.at("mlp_hidden").get<int>();
        c.ffn_hidden = j.at("ffn_hidden").get<int>();
        c.max_len = j.at("max_len").get<int>();
        c.freeze_encoder = j.value("freeze_encoder", false);
        c.low_res_head = j.value("low_res_head", false);
        c.seed = j.value("seed", std::uint64_t{0});
        c.task_names = j.at("task_names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model hyperparameters: ") + e.what());
    }
    c.validate();
    return c;
}

// --- spatial table -------------------------------------------------------------------

namespace {

std::vector<Scalar> axis_table(int positions, int half) {
    std::vector<Scalar> t(static_cast<std::size_t>(positions) * half);
    for (int p = 0; p < positions; ++p) {
        for (int m = 0; m < half / 2; ++m) {
            const double freq = std::pow(10000.0, -2.0 * m / half);
            t[static_cast<std::size_t>(p) * half + 2 * m] = static_cast<Scalar>(std::sin(p * freq));
            t[static_cast<std::size_t>(p) * half + 2 * m + 1] = static_cast<Scalar>(std::cos(p * freq));
        }
    }
    return t;
}

}  // namespace

SpatialEmbeddingTable::SpatialEmbeddingTable(int height, int width, int channels)
    : height_(height), width_(width), channels_(channels) {
    if (channels % 4 != 0 || channels <= 0) {
        throw ConfigError("spatial table: channels " + std::to_string(channels) + " must be a positive multiple of 4");
    }
    if (height <= 0 || width <= 0) throw ConfigError("spatial table: empty canvas");
    x_ = axis_table(width, channels / 2);
    y_ = axis_table(height, channels / 2);
}

std::vector<Scalar> SpatialEmbeddingTable::at(int row, int col) const {
    if (row < 0 || row >= height_ || col < 0 || col >= width_) {
        throw BoundsError("spatial table: (" + std::to_string(row) + ", " + std::to_string(col) + ") outside " +
                          std::to_string(height_) + "x" + std::to_string(width_));
    }
    const int half = channels_ / 2;
    std::vector<Scalar> out(x_.begin() + static_cast<std::ptrdiff_t>(col) * half,
                            x_.begin() + static_cast<std::ptrdiff_t>(col + 1) * half);
    out.insert(out.end(), y_.begin() + static_cast<std::ptrdiff_t>(row) * half,
               y_.begin() + static_cast<std::ptrdiff_t>(row + 1) * half);
    return out;
}

Tensor SpatialEmbeddingTable::lookup(std::span<const PixelIndex> cells, int stride) const {
    std::vector<Scalar> data;
    data.reserve(cells.size() * static_cast<std::size_t>(channels_));
    for (const auto& c : cells) {
        const auto row = at(c.row * stride, c.col * stride);
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({static_cast<std::int64_t>(cells.size()), channels_}, std::move(data));
}

Tensor SpatialEmbeddingTable::grid(int rows, int cols, int stride) const {
    std::vector<PixelIndex> cells;
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) cells.push_back({i, j});
    }
    return lookup(cells, stride);
}

Tensor SpatialEmbeddingTable::materialize() const {
    std::vector<Scalar> data;
    data.reserve(static_cast<std::size_t>(height_) * width_ * channels_);
    for (int i = 0; i < height_; ++i) {
        for (int j = 0; j < width_; ++j) {
            const auto row = at(i, j);
            data.insert(data.end(), row.begin(), row.end());
        }
    }
    return Tensor({height_, width_, channels_}, std::move(data));
}

// --- helpers ---------------------------------------------------------------------------

Tensor WorkingMemory::tokens() const {
    if (!foveal.defined()) return peripheral;
    const Tensor parts[] = {peripheral, foveal};
    return concat_rows(parts);
}

PixelIndex foveal_cell(const Fixation& f, int p4_rows, int p4_cols) {
    const long r = std::lround(f.y / 4.0), c = std::lround(f.x / 4.0);
    return {static_cast<int>(std::clamp(r, 0L, static_cast<long>(p4_rows) - 1)),
            static_cast<int>(std::clamp(c, 0L, static_cast<long>(p4_cols) - 1))};
}

Tensor image_tensor(const ImageRaster& image) {
    validate_image(image);
    const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
    std::vector<Scalar> data(3 * plane);
    for (int c = 0; c < 3; ++c) {
        const int src = image.channels == 1 ? 0 : c;
        for (std::size_t i = 0; i < plane; ++i) data[c * plane + i] = static_cast<Scalar>(image.values[src * plane + i]);
    }
    return Tensor({3, image.height, image.width}, std::move(data));
}

namespace {

Tensor row_of(const Tensor& table, std::int64_t row) {
    return reshape(slice_rows(table, row, 1), {table.dim(1)});
}

Tensor learnable_rows(std::int64_t rows, std::int64_t cols, Rng& rng) { return uniform_parameter({rows, cols}, cols, rng); }

}  // namespace

// --- layers -----------------------------------------------------------------------------

EncoderLayer::EncoderLayer(int dim, int heads, int ffn_width, Rng& rng)
    : norm_attn(dim), norm_ffn(dim), attn(dim, heads, rng), ffn(dim, ffn_width, rng) {}

Tensor EncoderLayer::forward(const Tensor& x, Tensor* attention) const {
    const Tensor h = norm_attn.forward(x);
    auto a = attn.forward(h, h, h);
    if (attention) *attention = a.weights;
    const Tensor y = add(x, a.output);
    return add(y, ffn.forward(norm_ffn.forward(y)));
}

void EncoderLayer::collect(const std::string& prefix, NamedParameters& out) const {
    norm_attn.collect(prefix + ".norm_attn", out);
    attn.collect(prefix + ".attn", out);
    norm_ffn.collect(prefix + ".norm_ffn", out);
    ffn.collect(prefix + ".ffn", out);
}

DecoderLayer::DecoderLayer(int dim, int heads, int ffn_width, Rng& rng)
    : norm_cross(dim),
      norm_self(dim),
      norm_ffn(dim),
      cross(dim, heads, rng),
      self(dim, heads, rng),
      ffn(dim, ffn_width, rng) {}

Tensor DecoderLayer::forward(const Tensor& queries, const Tensor& memory, Tensor* cross_attention,
                             Tensor* self_attention) const {
    auto c = cross.forward(norm_cross.forward(queries), memory, memory);
    if (cross_attention) *cross_attention = c.weights;
    const Tensor q1 = add(queries, c.output);
    const Tensor h = norm_self.forward(q1);
    auto s = self.forward(h, h, h);
    if (self_attention) *self_attention = s.weights;
    const Tensor q2 = add(q1, s.output);
    return add(q2, ffn.forward(norm_ffn.forward(q2)));
}

void DecoderLayer::collect(const std::string& prefix, NamedParameters& out) const {
    norm_cross.collect(prefix + ".norm_cross", out);
    cross.collect(prefix + ".cross", out);
    norm_self.collect(prefix + ".norm_self", out);
    self.collect(prefix + ".self", out);
    norm_ffn.collect(prefix + ".norm_ffn", out);
    ffn.collect(prefix + ".ffn", out);
}

// --- model ------------------------------------------------------------------------------

HatModel::HatModel(HatConfig config) : config_(std::move(config)) {
    config_.validate();
    const int C = config_.channels;
    Rng rng(config_.seed);
    int in = 3;
    for (int s = 0; s < 5; ++s) {
        encoder_convs.emplace_back(in, C, 3, 2, 1, rng);
        in = C;
    }
    lateral5 = Conv2d(C, C, 1, 1, 0, rng);
    lateral4 = Conv2d(C, C, 1, 1, 0, rng);
    lateral3 = Conv2d(C, C, 1, 1, 0, rng);
    lateral2 = Conv2d(C, C, 1, 1, 0, rng);
    smooth2 = Conv2d(C, C, 3, 1, 1, rng);
    smooth3 = Conv2d(C, C, 3, 1, 1, rng);
    smooth4 = Conv2d(C, C, 3, 1, 1, rng);
    scale_embedding = learnable_rows(2, C, rng);
    temporal_embedding = learnable_rows(config_.max_len + 1, C, rng);
    for (int l = 0; l < config_.encoder_layers; ++l) encoder.emplace_back(C, config_.heads, config_.ffn_width(), rng);
    encoder_norm = LayerNorm(C);
    queries = learnable_rows(config_.num_tasks(), C, rng);
    for (int l = 0; l < config_.decoder_layers; ++l) decoder.emplace_back(C, config_.heads, config_.ffn_width(), rng);
    decoder_norm = LayerNorm(C);
    mlp1 = Linear(C, config_.mlp_hidden, rng);
    mlp2 = Linear(config_.mlp_hidden, config_.mlp_hidden, rng);
    mlp3 = Linear(config_.mlp_hidden, C, rng);
    termination = Linear(C, 1, rng);
    table_ = SpatialEmbeddingTable(config_.canvas_height, config_.canvas_width, C);
}

FeaturePyramid HatModel::extract_pyramid(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw DimensionError("extract_pyramid: expected a [3 x H x W] image, got " + shape_string(image.shape()));
    }
    if (image.dim(1) != config_.canvas_height || image.dim(2) != config_.canvas_width) {
        throw ConfigError("extract_pyramid: image " + std::to_string(image.dim(1)) + "x" +
                          std::to_string(image.dim(2)) + " does not match the model canvas " +
                          std::to_string(config_.canvas_height) + "x" + std::to_string(config_.canvas_width) +
                          " (resize first)");
    }
    std::vector<Tensor> stages;
    Tensor x = image;
    for (const auto& conv : encoder_convs) {
        x = relu(conv.forward(x));
        stages.push_back(x);
    }
    // stages[s] has stride 2^(s+1).
    FeaturePyramid p;
    p.p1 = lateral5.forward(stages[4]);
    p.p2 = smooth2.forward(add(bilinear_upsample(p.p1, 2), lateral4.forward(stages[3])));
    p.p3 = smooth3.forward(add(bilinear_upsample(p.p2, 2), lateral3.forward(stages[2])));
    p.p4 = smooth4.forward(add(bilinear_upsample(p.p3, 2), lateral2.forward(stages[1])));
    return p;
}

Tensor HatModel::peripheral_tokens(const FeaturePyramid& pyramid) const {
    const int rows = static_cast<int>(pyramid.p1.dim(1)), cols = static_cast<int>(pyramid.p1.dim(2));
    const Tensor base = add_row_bias(channels_to_tokens(pyramid.p1), row_of(scale_embedding, 0));
    return add(base, table_.grid(rows, cols, 32));
}

Tensor HatModel::foveal_tokens(const FeaturePyramid& pyramid, std::span<const Fixation> fixations,
                               std::size_t first_index) const {
    const auto k = static_cast<std::int64_t>(fixations.size());
    if (k == 0) return {};
    if (static_cast<std::int64_t>(first_index) + k > temporal_embedding.dim(0)) {
        throw BoundsError("working memory: fixation index " + std::to_string(first_index + fixations.size() - 1) +
                          " exceeds the temporal table (max_len " + std::to_string(config_.max_len) + ")");
    }
    const int rows = static_cast<int>(pyramid.p4.dim(1)), cols = static_cast<int>(pyramid.p4.dim(2));
    std::vector<PixelIndex> cells;
    for (const auto& f : fixations) {
        if (!(f.x >= 0 && f.x < config_.canvas_width && f.y >= 0 && f.y < config_.canvas_height)) {
            throw BoundsError("working memory: fixation (" + std::to_string(f.x) + ", " + std::to_string(f.y) +
                              ") outside the " + std::to_string(config_.canvas_height) + "x" +
                              std::to_string(config_.canvas_width) + " canvas");
        }
        cells.push_back(foveal_cell(f, rows, cols));
    }
    Tensor x = add_row_bias(gather_pixels(pyramid.p4, cells), row_of(scale_embedding, 1));
    x = add(x, table_.lookup(cells, 4));
    return add(x, slice_rows(temporal_embedding, static_cast<std::int64_t>(first_index), k));
}

WorkingMemory HatModel::build_working_memory(const FeaturePyramid& pyramid, std::span<const Fixation> fixations) const {
    return {peripheral_tokens(pyramid), foveal_tokens(pyramid, fixations)};
}

Tensor HatModel::encode_memory(const Tensor& tokens, std::vector<Tensor>* attention) const {
    if (tokens.rank() != 2 || tokens.dim(0) < 1) throw DimensionError("encode_memory: need at least one token");
    Tensor x = tokens;
    for (const auto& layer : encoder) {
        Tensor w;
        x = layer.forward(x, attention ? &w : nullptr);
        if (attention) attention->push_back(w);
    }
    return encoder.empty() ? x : encoder_norm.forward(x);
}

Tensor HatModel::aggregate(const Tensor& q, const Tensor& memory, Tensor* cross_attention,
                           std::vector<Tensor>* all_cross, std::vector<Tensor>* all_self) const {
    Tensor x = q;
    Tensor cross, self;
    for (const auto& layer : decoder) {
        x = layer.forward(x, memory, &cross, &self);
        if (all_cross) all_cross->push_back(cross);
        if (all_self) all_self->push_back(self);
    }
    if (cross_attention) *cross_attention = cross;
    return decoder_norm.forward(x);
}

void HatModel::predict(const Tensor& updated, const FeaturePyramid& pyramid, Tensor& heatmaps,
                       Tensor& terminations) const {
    const Tensor embedding = mlp3.forward(relu(mlp2.forward(relu(mlp1.forward(updated)))));
    const Tensor& fine = config_.low_res_head ? pyramid.p2 : pyramid.p4;
    const int factor = config_.low_res_head ? 16 : 4;
    const auto C = fine.dim(0), h = fine.dim(1), w = fine.dim(2);
    const auto N = updated.dim(0);
    const Tensor logits = matmul(embedding, reshape(fine, {C, h * w}));
    heatmaps = bilinear_upsample(reshape(sigmoid(logits), {N, h, w}), factor);
    terminations = sigmoid(termination.forward(updated));
}

ImageContext HatModel::prepare(const Tensor& image) const {
    ImageContext ctx;
    ctx.pyramid = extract_pyramid(image);
    ctx.peripheral = peripheral_tokens(ctx.pyramid);
    return ctx;
}

PredictionSet HatModel::predict_from(const ImageContext& ctx, std::span<const Fixation> fixations,
                                     const Tensor* foveal) const {
    Tensor fov = foveal ? *foveal : foveal_tokens(ctx.pyramid, fixations);
    const WorkingMemory memory{ctx.peripheral, fov};
    PredictionSet out;
    const Tensor encoded = encode_memory(memory.tokens(), &out.encoder_attention);
    const Tensor updated =
        aggregate(queries, encoded, &out.cross_attention, &out.decoder_cross_attention, &out.decoder_self_attention);
    predict(updated, ctx.pyramid, out.heatmaps, out.terminations);
    return out;
}

PredictionSet HatModel::forward_all(const Tensor& image, std::span<const Fixation> fixations) const {
    return predict_from(prepare(image), fixations);
}

TaskOutput HatModel::forward(const Tensor& image, std::span<const Fixation> fixations, int task) const {
    if (task < 0 || task >= config_.num_tasks()) {
        throw ArgumentError("forward: unknown task id " + std::to_string(task) + " (model has " +
                            std::to_string(config_.num_tasks()) + " tasks)");
    }
    TaskOutput out;
    out.all = forward_all(image, fixations);
    const auto N = out.all.heatmaps.dim(0), H = out.all.heatmaps.dim(1), W = out.all.heatmaps.dim(2);
    out.heatmap = reshape(slice_rows(reshape(out.all.heatmaps, {N, H * W}), task, 1), {H, W});
    out.termination = reshape(slice_rows(out.all.terminations, task, 1), {1});
    const auto& attn = out.all.cross_attention;
    const auto heads = attn.dim(0), lambda = attn.dim(2);
    std::vector<Scalar> rows;
    for (std::int64_t h = 0; h < heads; ++h) {
        const auto base = attn.values().begin() + (h * N + task) * lambda;
        rows.insert(rows.end(), base, base + lambda);
    }
    out.attention = Tensor({heads, lambda}, std::move(rows));
    return out;
}

NamedParameters HatModel::parameters() const {
    NamedParameters out;
    for (std::size_t s = 0; s < encoder_convs.size(); ++s) encoder_convs[s].collect("pixel_encoder." + std::to_string(s), out);
    lateral5.collect("pixel_decoder.lateral5", out);
    lateral4.collect("pixel_decoder.lateral4", out);
    lateral3.collect("pixel_decoder.lateral3", out);
    lateral2.collect("pixel_decoder.lateral2", out);
    smooth2.collect("pixel_decoder.smooth2", out);
    smooth3.collect("pixel_decoder.smooth3", out);
    smooth4.collect("pixel_decoder.smooth4", out);
    out.emplace_back("memory.scale_embedding", scale_embedding);
    out.emplace_back("memory.temporal_embedding", temporal_embedding);
    for (std::size_t l = 0; l < encoder.size(); ++l) encoder[l].collect("encoder." + std::to_string(l), out);
    encoder_norm.collect("encoder.norm", out);
    out.emplace_back("queries", queries);
    for (std::size_t l = 0; l < decoder.size(); ++l) decoder[l].collect("decoder." + std::to_string(l), out);
    decoder_norm.collect("decoder.norm", out);
    mlp1.collect("head.mlp.0", out);
    mlp2.collect("head.mlp.1", out);
    mlp3.collect("head.mlp.2", out);
    termination.collect("head.termination", out);
    return out;
}

NamedParameters HatModel::trainable_parameters() const {
    NamedParameters all = parameters();
    if (!config_.freeze_encoder) return all;
    NamedParameters out;
    for (auto& p : all) {
        if (p.first.rfind("pixel_encoder.", 0) != 0) out.push_back(std::move(p));
    }
    return out;
}

std::size_t HatModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.second.size();
    return n;
}

int HatModel::task_index(const std::string& task) const {
    for (int t = 0; t < config_.num_tasks(); ++t) {
        if (config_.task_names[static_cast<std::size_t>(t)] == task) return t;
    }
    throw ArgumentError("model has no task '" + task + "'");
}

// --- checkpoint ---------------------------------------------------------------------------
//
//   "HATCKPT1" | u64 header length | header JSON {"config": ..., "tensors": [names]}
//   then per tensor: u64 name length | name | tensor snapshot

namespace {

constexpr char kCheckpointMagic[8] = {'H', 'A', 'T', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void HatModel::save(const std::filesystem::path& path) const {
    const auto params = parameters();
    nlohmann::json header;
    header["config"] = config_.to_json();
    header["scalar_bits"] = kScalarBits;
    auto& names = header["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : params) names.push_back(name);
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, 8);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : params) {
        write_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_snapshot(out, t);
    }
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

HatModel HatModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw IoError(path.string() + " is not a checkpoint");
    }
    const auto len = read_u64(in);
    if (len > (1u << 26)) throw IoError("checkpoint: implausible header length");
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw IoError("checkpoint: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint header: ") + e.what());
    }
    HatModel model(HatConfig::from_json(header.at("config")));
    auto params = model.parameters();
    const auto names = header.at("tensors").get<std::vector<std::string>>();
    if (names.size() != params.size()) {
        throw ValidationError("checkpoint holds " + std::to_string(names.size()) + " tensors, model expects " +
                              std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto nlen = read_u64(in);
        if (nlen > 4096) throw IoError("checkpoint: implausible tensor name length");
        std::string name(nlen, '\0');
        if (!in.read(name.data(), static_cast<std::streamsize>(nlen))) throw IoError("checkpoint: truncated name");
        if (name != params[i].first) {
            throw ValidationError("checkpoint tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                                  params[i].first + "'");
        }
        const Tensor loaded = read_snapshot(in);
        if (loaded.shape() != params[i].second.shape()) {
            throw ValidationError("checkpoint tensor '" + name + "' has shape " + shape_string(loaded.shape()) +
                                  ", model expects " + shape_string(params[i].second.shape()));
        }
        auto dst = params[i].second.values_for_update();
        std::copy(loaded.values().begin(), loaded.values().end(), dst.begin());
    }
    return model;
}

HAT_NS_END
