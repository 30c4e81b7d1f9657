#include <algorithm>
#include <cmath>
#include <fstream>

#include "doctest.h"
#include "hat/errors.hpp"
#include "hat/model.hpp"
#include "support.hpp"

using namespace hat;
using hat::test::random_tensor;

namespace {

HatConfig small_config(int H = 64, int W = 96, int C = 8) {
    HatConfig c;
    c.canvas_height = H;
    c.canvas_width = W;
    c.channels = C;
    c.heads = 2;
    c.encoder_layers = 2;
    c.decoder_layers = 2;
    c.mlp_hidden = 16;
    c.seed = 21;
    c.task_names = {"red", "blue", "green"};
    return c;
}

Tensor random_image(int H, int W, Rng& rng) { return random_tensor({3, H, W}, rng, 0, 1); }

void check_same(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
}

void check_rows_sum_to_one(const Tensor& attention) {
    const auto n = static_cast<std::size_t>(attention.dim(attention.rank() - 1));
    for (std::size_t r = 0; r < attention.size() / n; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) s += attention[r * n + j];
        CHECK(std::abs(s - 1) < 1e-6);
    }
}

// Direct double-precision evaluation of the pieces of one decoder layer.
using Matrix = std::vector<std::vector<double>>;

Matrix to_matrix(const Tensor& t) {
    Matrix m(static_cast<std::size_t>(t.dim(0)), std::vector<double>(static_cast<std::size_t>(t.dim(1))));
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m[i].size(); ++j) m[i][j] = t[i * m[i].size() + j];
    return m;
}

Matrix linear(const Linear& l, const Matrix& x) {
    const auto in = static_cast<std::size_t>(l.weight.dim(0)), out = static_cast<std::size_t>(l.weight.dim(1));
    Matrix y(x.size(), std::vector<double>(out));
    for (std::size_t r = 0; r < x.size(); ++r)
        for (std::size_t o = 0; o < out; ++o) {
            double s = l.bias.defined() ? double(l.bias[o]) : 0.0;
            for (std::size_t i = 0; i < in; ++i) s += x[r][i] * double(l.weight[i * out + o]);
            y[r][o] = s;
        }
    return y;
}

Matrix norm(const LayerNorm& ln, const Matrix& x) {
    Matrix y = x;
    for (auto& row : y) {
        double mu = 0, var = 0;
        for (double v : row) mu += v;
        mu /= row.size();
        for (double v : row) var += (v - mu) * (v - mu);
        var /= row.size();
        for (std::size_t j = 0; j < row.size(); ++j)
            row[j] = (row[j] - mu) / std::sqrt(var + 1e-5) * double(ln.gamma[j]) + double(ln.beta[j]);
    }
    return y;
}

Matrix attend(const MultiHeadAttention& mha, const Matrix& q, const Matrix& kv) {
    const Matrix Q = linear(mha.query, q), K = linear(mha.key, kv), V = linear(mha.value, kv);
    const std::size_t C = Q[0].size(), d = C / mha.heads;
    Matrix concat(q.size(), std::vector<double>(C, 0.0));
    for (int h = 0; h < mha.heads; ++h)
        for (std::size_t i = 0; i < q.size(); ++i) {
            std::vector<double> w(kv.size());
            double mx = -1e300, z = 0;
            for (std::size_t j = 0; j < kv.size(); ++j) {
                double s = 0;
                for (std::size_t c = 0; c < d; ++c) s += Q[i][h * d + c] * K[j][h * d + c];
                w[j] = s / std::sqrt(double(d));
                mx = std::max(mx, w[j]);
            }
            for (double& v : w) z += (v = std::exp(v - mx));
            for (std::size_t j = 0; j < kv.size(); ++j)
                for (std::size_t c = 0; c < d; ++c) concat[i][h * d + c] += w[j] / z * V[j][h * d + c];
        }
    return linear(mha.output, concat);
}

Matrix plus(Matrix a, const Matrix& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
    return a;
}

Matrix relu(Matrix a) {
    for (auto& row : a)
        for (double& v : row) v = std::max(v, 0.0);
    return a;
}

}  // namespace

TEST_CASE("feature pyramid") {
    Rng rng(20);
    SUBCASE("strides at 320x512") {
        HatConfig c = small_config(320, 512, 32);
        const HatModel model(c);
        const FeaturePyramid p = model.extract_pyramid(random_image(320, 512, rng));
        CHECK(p.p1.shape() == Shape{32, 10, 16});
        CHECK(p.p2.shape() == Shape{32, 20, 32});
        CHECK(p.p3.shape() == Shape{32, 40, 64});
        CHECK(p.p4.shape() == Shape{32, 80, 128});
    }
    SUBCASE("identical images give identical pyramids") {
        const HatModel model(small_config());
        const Tensor img = random_image(64, 96, rng);
        const Tensor copy(img.shape(), std::vector<Scalar>(img.values().begin(), img.values().end()));
        const FeaturePyramid a = model.extract_pyramid(img), b = model.extract_pyramid(copy);
        check_same(a.p1, b.p1);
        check_same(a.p4, b.p4);
    }
    SUBCASE("dimensions not divisible by 32") {
        const HatModel model(small_config());
        CHECK_THROWS_AS(model.extract_pyramid(random_image(48, 96, rng)), ConfigError);
        HatConfig bad = small_config();
        bad.canvas_height = 80;
        CHECK_THROWS_AS(HatModel{bad}, ConfigError);
    }
}

TEST_CASE("spatial embedding table") {
    SUBCASE("origin row is sin 0 and cos 1") {
        const SpatialEmbeddingTable g(64, 64, 16);
        const auto row = g.at(0, 0);
        REQUIRE(row.size() == 16);
        for (std::size_t i = 0; i < 16; ++i) CHECK(row[i] == (i % 2 == 0 ? 0 : 1));
    }
    SUBCASE("stride lookup reads floor(i S)") {
        const SpatialEmbeddingTable g(320, 512, 32);
        const std::vector<PixelIndex> cells = {{1, 1}, {0, 3}, {9, 15}};
        const Tensor t = g.lookup(cells, 32);
        for (std::size_t k = 0; k < cells.size(); ++k) {
            const auto want = g.at(cells[k].row * 32, cells[k].col * 32);
            for (std::size_t c = 0; c < 32; ++c) CHECK(t[k * 32 + c] == want[c]);
        }
        const Tensor full = g.materialize();
        CHECK(full.shape() == Shape{320, 512, 32});
        const auto g3232 = g.at(32, 32);
        for (std::size_t c = 0; c < 32; ++c) CHECK(full[(32 * 512 + 32) * 32 + c] == g3232[c]);
    }
    SUBCASE("closed form of a row") {
        const SpatialEmbeddingTable g(40, 50, 8);
        const auto row = g.at(7, 33);
        for (int m = 0; m < 2; ++m) {
            const double w = std::pow(10000.0, -2.0 * m / 4.0);
            CHECK(row[2 * m] == doctest::Approx(std::sin(33 * w)));
            CHECK(row[2 * m + 1] == doctest::Approx(std::cos(33 * w)));
            CHECK(row[4 + 2 * m] == doctest::Approx(std::sin(7 * w)));
            CHECK(row[4 + 2 * m + 1] == doctest::Approx(std::cos(7 * w)));
        }
    }
    SUBCASE("channels not divisible by 4") { CHECK_THROWS_AS(SpatialEmbeddingTable(32, 32, 6), ConfigError); }
    SUBCASE("distinct pixels have distinct rows at 320x512") {
        // A row is [column part | row part], so the dot product of
        // two rows is the column-part dot plus the row-part dot; both tables are filled from at().
        const int H = 320, W = 512, C = 32, half = C / 2;
        const SpatialEmbeddingTable g(H, W, C);
        std::vector<std::vector<double>> xs(W), ys(H);
        for (int c = 0; c < W; ++c) {
            const auto r = g.at(0, c);
            xs[c].assign(r.begin(), r.begin() + half);
        }
        for (int r = 0; r < H; ++r) {
            const auto v = g.at(r, 0);
            ys[r].assign(v.begin() + half, v.end());
        }
        auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
            double s = 0;
            for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
            return s;
        };
        std::vector<double> xn(W), yn(H);
        for (int c = 0; c < W; ++c) xn[c] = dot(xs[c], xs[c]);
        for (int r = 0; r < H; ++r) yn[r] = dot(ys[r], ys[r]);
        std::vector<double> xd(std::size_t(W) * W), yd(std::size_t(H) * H);
        for (int a = 0; a < W; ++a)
            for (int b = 0; b < W; ++b) xd[std::size_t(a) * W + b] = dot(xs[a], xs[b]);
        for (int a = 0; a < H; ++a)
            for (int b = 0; b < H; ++b) yd[std::size_t(a) * H + b] = dot(ys[a], ys[b]);
        // Every row has the same norm (one per sin/cos pair), so the largest cosine over all pixel
        // pairs splits into the largest column-part and row-part dots with the pixels kept distinct.
        const double n0 = xn[0] + yn[0];
        for (int c = 0; c < W; ++c) REQUIRE(std::abs(xn[c] - xn[0]) < 1e-5);
        for (int r = 0; r < H; ++r) REQUIRE(std::abs(yn[r] - yn[0]) < 1e-5);
        auto max_of = [](const std::vector<double>& d, int n, bool off_diagonal) {
            double m = -1e300;
            for (int a = 0; a < n; ++a)
                for (int b = 0; b < n; ++b)
                    if (!off_diagonal || a != b) m = std::max(m, d[std::size_t(a) * n + b]);
            return m;
        };
        const double worst = std::max(max_of(xd, W, true) + max_of(yd, H, false),
                                      max_of(xd, W, false) + max_of(yd, H, true)) / n0;
        CHECK(worst < 1 - 1e-6);
    }
}

TEST_CASE("working memory") {
    Rng rng(22);
    SUBCASE("no fixations at 320x512 gives 160 peripheral tokens") {
        const HatModel model(small_config(320, 512, 8));
        const WorkingMemory m = model.build_working_memory(model.extract_pyramid(random_image(320, 512, rng)), {});
        CHECK(m.peripheral_count() == 160);
        CHECK(m.foveal_count() == 0);
        CHECK(m.size() == 160);
        CHECK(m.tokens().shape() == Shape{160, 8});
    }
    SUBCASE("foveal cell rounding") {
        CHECK(foveal_cell({6, 6}, 80, 128) == PixelIndex{2, 2});
        CHECK(foveal_cell({5.9, 1.9}, 80, 128) == PixelIndex{0, 1});
        CHECK(foveal_cell({511.9, 319.9}, 80, 128) == PixelIndex{79, 127});
    }
    SUBCASE("foveal token formula") {
        const HatModel model(small_config());
        const FeaturePyramid p = model.extract_pyramid(random_image(64, 96, rng));
        const std::vector<Fixation> fix = {{10, 30}, {57.4, 9.9}};
        const Tensor f = model.foveal_tokens(p, fix);
        const int C = 8, rows = 16, cols = 24;
        for (std::size_t k = 0; k < fix.size(); ++k) {
            const PixelIndex cell = foveal_cell(fix[k], rows, cols);
            const auto g = model.spatial_table().at(cell.row * 4, cell.col * 4);
            for (int c = 0; c < C; ++c) {
                const double want = double(p.p4[(c * rows + cell.row) * cols + cell.col]) +
                                    double(model.scale_embedding[C + c]) + g[c] +
                                    double(model.temporal_embedding[k * C + c]);
                CHECK(f[k * C + c] == doctest::Approx(want).epsilon(1e-6));
            }
        }
    }
    SUBCASE("appending a fixation keeps earlier tokens") {
        const HatModel model(small_config());
        const FeaturePyramid p = model.extract_pyramid(random_image(64, 96, rng));
        std::vector<Fixation> fix;
        Tensor prev = model.build_working_memory(p, fix).tokens();
        for (int k = 1; k <= 5; ++k) {
            fix.push_back({rng.uniform(0, 95.9), rng.uniform(0, 63.9)});
            const Tensor next = model.build_working_memory(p, fix).tokens();
            REQUIRE(next.dim(0) == prev.dim(0) + 1);
            for (std::size_t i = 0; i < prev.size(); ++i) REQUIRE(next[i] == prev[i]);
            prev = next;
        }
    }
    SUBCASE("bounds") {
        const HatModel model(small_config());
        const FeaturePyramid p = model.extract_pyramid(random_image(64, 96, rng));
        const std::vector<Fixation> outside = {{96, 10}};
        CHECK_THROWS_AS(model.foveal_tokens(p, outside), BoundsError);
        const std::vector<Fixation> too_many(8, Fixation{5, 5});
        CHECK_THROWS_AS(model.foveal_tokens(p, too_many), BoundsError);
    }
}

TEST_CASE("memory encoder") {
    Rng rng(23);
    const HatModel model(small_config());
    SUBCASE("single token attends to itself") {
        std::vector<Tensor> attn;
        const Tensor x = random_tensor({1, 8}, rng);
        const Tensor y = model.encode_memory(x, &attn);
        CHECK(y.shape() == Shape{1, 8});
        for (const auto& a : attn)
            for (Scalar w : a.values()) CHECK(w == 1);
        check_same(y, model.encode_memory(x));
    }
    SUBCASE("permutation equivariance") {
        for (int trial = 0; trial < 5; ++trial) {
            const Tensor x = random_tensor({7, 8}, rng, -2, 2);
            const std::int64_t i = 4, j = 6;
            std::vector<Scalar> swapped(x.values().begin(), x.values().end());
            for (int c = 0; c < 8; ++c) std::swap(swapped[i * 8 + c], swapped[j * 8 + c]);
            const Tensor a = model.encode_memory(x), b = model.encode_memory(Tensor({7, 8}, swapped));
            for (std::int64_t r = 0; r < 7; ++r) {
                const std::int64_t s = r == i ? j : r == j ? i : r;
                for (int c = 0; c < 8; ++c) CHECK(b[s * 8 + c] == doctest::Approx(a[r * 8 + c]).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("aggregation decoder") {
    Rng rng(24);
    SUBCASE("one decoder layer against the direct formula") {
        const DecoderLayer layer(8, 2, 16, rng);
        const Tensor q = random_tensor({2, 8}, rng), m = random_tensor({3, 8}, rng);
        Tensor cross, self;
        const Tensor got = layer.forward(q, m, &cross, &self);
        const Matrix Q = to_matrix(q), M = to_matrix(m);
        const Matrix q1 = plus(Q, attend(layer.cross, norm(layer.norm_cross, Q), M));
        const Matrix h = norm(layer.norm_self, q1);
        const Matrix q2 = plus(q1, attend(layer.self, h, h));
        const Matrix want = plus(q2, linear(layer.ffn.second, relu(linear(layer.ffn.first, norm(layer.norm_ffn, q2)))));
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(got[i * 8 + c] - want[i][c]) < 1e-5);
        CHECK(cross.shape() == Shape{2, 2, 3});
        CHECK(self.shape() == Shape{2, 2, 2});
        check_rows_sum_to_one(cross);
    }
    SUBCASE("a single query attends only to itself") {
        HatConfig c = small_config();
        c.task_names = {"freeview"};
        const HatModel model(c);
        const PredictionSet out = model.forward_all(random_image(64, 96, rng), std::vector<Fixation>{{3, 4}});
        for (const auto& s : out.decoder_self_attention) {
            CHECK(s.shape() == Shape{2, 1, 1});
            for (Scalar w : s.values()) CHECK(w == 1);
        }
    }
    SUBCASE("cross-attention shape") {
        const HatModel model(small_config());
        const std::vector<Fixation> fix = {{3, 4}, {50, 20}};
        const PredictionSet out = model.forward_all(random_image(64, 96, rng), fix);
        CHECK(out.cross_attention.shape() == Shape{2, 3, 6 + 2});
        check_rows_sum_to_one(out.cross_attention);
        for (const auto& a : out.encoder_attention) check_rows_sum_to_one(a);
        for (const auto& a : out.decoder_self_attention) check_rows_sum_to_one(a);
    }
}

TEST_CASE("prediction heads") {
    Rng rng(25);
    HatModel model(small_config());
    const FeaturePyramid p = model.extract_pyramid(random_image(64, 96, rng));
    const Tensor updated = random_tensor({3, 8}, rng);
    SUBCASE("zero task embedding gives 0.5 everywhere") {
        for (auto& v : model.mlp3.weight.values_for_update()) v = 0;
        for (auto& v : model.mlp3.bias.values_for_update()) v = 0;
        Tensor heat, term;
        model.predict(updated, p, heat, term);
        CHECK(heat.shape() == Shape{3, 64, 96});
        for (Scalar v : heat.values()) CHECK(v == Scalar(0.5));
    }
    SUBCASE("zero termination head gives 0.5") {
        for (auto& v : model.termination.weight.values_for_update()) v = 0;
        for (auto& v : model.termination.bias.values_for_update()) v = 0;
        Tensor heat, term;
        model.predict(updated, p, heat, term);
        CHECK(term.shape() == Shape{3, 1});
        for (Scalar v : term.values()) CHECK(v == Scalar(0.5));
    }
    SUBCASE("dot-product head on a 2x2 map") {
        // Embedding fixed through the last bias; corner output pixels read the corner cells directly.
        for (auto& v : model.mlp3.weight.values_for_update()) v = 0;
        const std::vector<Scalar> e = {1, -2, 0.5, 0, 0, 0, 0, 3};
        std::copy(e.begin(), e.end(), model.mlp3.bias.values_for_update().begin());
        FeaturePyramid tiny = p;
        std::vector<Scalar> cells(8 * 4, 0);
        const double vecs[4][3] = {{0.1, 0.2, 0.3}, {-0.5, 0.25, 1}, {0.3, 0.3, -0.6}, {0, 0, 0}};
        for (int k = 0; k < 4; ++k)
            for (int c = 0; c < 3; ++c) cells[c * 4 + k] = Scalar(vecs[k][c]);
        cells[7 * 4 + 3] = Scalar(0.2);
        tiny.p4 = Tensor({8, 2, 2}, cells);
        Tensor heat, term;
        model.predict(random_tensor({1, 8}, rng), tiny, heat, term);
        REQUIRE(heat.shape() == Shape{1, 8, 8});
        const double logits[4] = {1 * 0.1 - 2 * 0.2 + 0.5 * 0.3, 1 * -0.5 - 2 * 0.25 + 0.5 * 1,
                                  1 * 0.3 - 2 * 0.3 + 0.5 * -0.6, 3 * 0.2};
        const int corners[4][2] = {{0, 0}, {0, 7}, {7, 0}, {7, 7}};
        for (int k = 0; k < 4; ++k) {
            const double want = 1 / (1 + std::exp(-logits[k]));
            CHECK(heat[corners[k][0] * 8 + corners[k][1]] == doctest::Approx(want).epsilon(1e-6));
        }
    }
}

TEST_CASE("forward") {
    Rng rng(26);
    const HatModel model(small_config());
    const Tensor image = random_image(64, 96, rng);
    const std::vector<Fixation> fix = {{48, 32}, {10.2, 50.7}, {90, 3}};
    SUBCASE("shapes, ranges and determinism") {
        const TaskOutput a = model.forward(image, fix, 1);
        CHECK(a.heatmap.shape() == Shape{64, 96});
        CHECK(a.termination.size() == 1);
        CHECK(a.attention.shape() == Shape{2, 6 + 3});
        for (Scalar v : a.heatmap.values()) CHECK((v >= 0 && v <= 1));
        CHECK((a.termination[0] > 0 && a.termination[0] < 1));
        const TaskOutput b = model.forward(image, fix, 1);
        check_same(a.heatmap, b.heatmap);
        check_same(a.termination, b.termination);
    }
    SUBCASE("task selection matches the full prediction set") {
        const PredictionSet all = model.forward_all(image, fix);
        for (int t = 0; t < 3; ++t) {
            const TaskOutput o = model.forward(image, fix, t);
            for (std::size_t i = 0; i < o.heatmap.size(); ++i) REQUIRE(o.heatmap[i] == all.heatmaps[t * 64 * 96 + i]);
            CHECK(o.termination[0] == all.terminations[t]);
        }
    }
    SUBCASE("unknown task") {
        CHECK_THROWS_AS(model.forward(image, fix, 3), ArgumentError);
        CHECK_THROWS_AS(model.task_index("purple"), ArgumentError);
    }
    SUBCASE("cached image context matches a fresh pass") {
        const ImageContext ctx = model.prepare(image);
        const PredictionSet a = model.predict_from(ctx, fix);
        const PredictionSet b = model.forward_all(image, fix);
        check_same(a.heatmaps, b.heatmaps);
        check_same(a.terminations, b.terminations);
    }
    SUBCASE("swapping two task queries swaps their outputs") {
        HatModel swapped = HatModel(model.config());
        const NamedParameters src = model.parameters(), dst = swapped.parameters();
        for (std::size_t k = 0; k < src.size(); ++k) {
            auto to = Tensor(dst[k].second).values_for_update();
            std::copy(src[k].second.values().begin(), src[k].second.values().end(), to.begin());
        }
        auto q = swapped.queries.values_for_update();
        for (int c = 0; c < 8; ++c) std::swap(q[0 * 8 + c], q[2 * 8 + c]);
        const PredictionSet a = model.forward_all(image, fix), b = swapped.forward_all(image, fix);
        const std::size_t plane = 64 * 96;
        const int map[3] = {2, 1, 0};
        for (int t = 0; t < 3; ++t) {
            for (std::size_t i = 0; i < plane; i += 37) {
                CHECK(b.heatmaps[map[t] * plane + i] == doctest::Approx(a.heatmaps[t * plane + i]).epsilon(1e-5));
            }
            CHECK(b.terminations[map[t]] == doctest::Approx(a.terminations[t]).epsilon(1e-5));
        }
    }
}

TEST_CASE("checkpoint round trip") {
    Rng rng(27);
    const auto dir = hat::test::scratch_dir("checkpoint");
    HatConfig c = small_config();
    c.low_res_head = true;
    const HatModel model(c);
    model.save(dir / "m.hatckpt");
    const HatModel back = HatModel::load(dir / "m.hatckpt");
    CHECK(back.config().to_json() == c.to_json());
    const NamedParameters a = model.parameters(), b = back.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].first == b[k].first);
        check_same(a[k].second, b[k].second);
    }
    const Tensor image = random_image(64, 96, rng);
    check_same(model.forward(image, {}, 0).heatmap, back.forward(image, {}, 0).heatmap);

    CHECK_THROWS_AS(HatModel::load(dir / "missing.hatckpt"), IoError);
    {
        std::ofstream f(dir / "junk.hatckpt", std::ios::binary);
        f << "not a checkpoint";
    }
    CHECK_THROWS_AS(HatModel::load(dir / "junk.hatckpt"), IoError);
}

TEST_CASE("frozen encoder is excluded from training parameters") {
    HatConfig c = small_config();
    const HatModel free(c);
    c.freeze_encoder = true;
    const HatModel frozen(c);
    CHECK(frozen.trainable_parameters().size() < free.trainable_parameters().size());
    CHECK(free.trainable_parameters().size() == free.parameters().size());
    for (const auto& [name, t] : frozen.trainable_parameters()) CHECK(name.rfind("pixel_encoder", 0) != 0);
}
