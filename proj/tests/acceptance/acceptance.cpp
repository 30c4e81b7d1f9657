// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: hat_acceptance [work_dir] [--only N[,N...]]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "hat/gradcheck_suite.hpp"
#include "hat/interpret.hpp"
#include "hat/pipeline.hpp"
#include "hat/synth.hpp"
#include "wide.hpp"

namespace fs = std::filesystem;
using namespace hat;

namespace {

// Tolerances and budgets.
constexpr double kGradcheckSeconds = 120;
constexpr double kAlignmentSeconds = 60;
constexpr double kIdentityTol = 1e-9;
constexpr double kRowSumTol = 1e-6;
constexpr double kReuseTol = 1e-6;
constexpr double kFocalPerfect = 1e-5;
constexpr double kHandCaseTol = 1e-9;
constexpr double kLossDropRatio = 0.10;
constexpr double kTrainSS = 0.8;
constexpr double kTrainSeconds = 600;
constexpr double kHitRate = 0.80;
constexpr double kStopRate = 0.90;
constexpr double kBaselineIgTol = 1e-6;
constexpr double kBaselineAucTol = 0.02;

// Desk-scale runs.
constexpr int kDeskChannels = 16;
constexpr int kDeskEpochs = 500;
constexpr int kGeneralizationEpochs = 200;
constexpr int kGeneralizationTrain = 64;
constexpr int kGeneralizationHeldOut = 32;
constexpr int kBaselineImages = 2048;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// --- 1 -----------------------------------------------------------------------

Outcome gradient_fidelity() {
    const auto t0 = Clock::now();
    const GradCheckSuiteReport r32 = run_gradcheck_suite_32();
    const GradCheckSuiteReport r64 = run_gradcheck_suite_64();
    const double s = since(t0);
    double worst_quadratic_64 = 0;
    for (const auto& f : r64.families) {
        if (f.threshold <= 1e-6) worst_quadratic_64 = std::max(worst_quadratic_64, f.max_relative_error);
    }
    Outcome o;
    o.passed = r32.passed && r64.passed && s < kGradcheckSeconds;
    o.detail = "32-bit worst " + r32.worst_family + " " + fmt("%.2e", r32.worst_error) + "; 64-bit worst " +
               r64.worst_family + " " + fmt("%.2e", r64.worst_error) + ", quadratic " +
               fmt("%.2e", worst_quadratic_64) + "; " + fmt("%.1f s", s);
    for (const auto* r : {&r32, &r64}) {
        for (const auto& f : r->families) {
            if (!f.passed) o.detail += "; FAILED " + std::to_string(r->scalar_bits) + "-bit " + f.family;
        }
    }
    return o;
}

// --- 2 -----------------------------------------------------------------------

// Best score over every alignment path, enumerated without memoization.
double enumerate_alignments(const std::vector<int>& a, const std::vector<int>& b, std::size_t i, std::size_t j,
                            const AlignmentParams& p) {
    if (i == a.size() && j == b.size()) return 0;
    double best = -std::numeric_limits<double>::infinity();
    if (i < a.size() && j < b.size()) {
        best = (a[i] == b[j] ? p.match_reward : -p.mismatch_penalty) + enumerate_alignments(a, b, i + 1, j + 1, p);
    }
    if (i < a.size()) best = std::max(best, -p.gap_penalty + enumerate_alignments(a, b, i + 1, j, p));
    if (j < b.size()) best = std::max(best, -p.gap_penalty + enumerate_alignments(a, b, i, j + 1, p));
    return best;
}

Outcome alignment_oracle() {
    const auto t0 = Clock::now();
    std::vector<std::vector<int>> seqs;
    for (int len = 1; len <= 5; ++len) {
        int count = 1;
        for (int k = 0; k < len; ++k) count *= 3;
        for (int code = 0; code < count; ++code) {
            std::vector<int> s(static_cast<std::size_t>(len));
            int c = code;
            for (auto& x : s) x = c % 3, c /= 3;
            seqs.push_back(s);
        }
    }
    const AlignmentParams settings[] = {AlignmentParams{}, AlignmentParams{2, 1, 0.5}};
    std::size_t pairs = 0, mismatches = 0;
    for (const auto& p : settings) {
        for (const auto& a : seqs) {
            for (const auto& b : seqs) {
                ++pairs;
                if (nw_align(a, b, p).score != enumerate_alignments(a, b, 0, 0, p)) ++mismatches;
            }
        }
    }
    const std::vector<int> none, one = {1};
    const AlignmentScore empty = nw_align(none, one);
    const double s = since(t0);
    Outcome o;
    o.passed = mismatches == 0 && empty.empty && empty.score == 0 && s < kAlignmentSeconds;
    o.detail = std::to_string(pairs) + " pairs, " + std::to_string(mismatches) + " mismatches; empty input flagged " +
               (empty.empty ? "yes" : "no") + "; " + fmt("%.1f s", s);
    return o;
}

// --- 3 -----------------------------------------------------------------------

Outcome metric_identities(const fs::path& work) {
    const int H = 64, W = 64;
    const std::size_t n = static_cast<std::size_t>(H * W);
    Rng rng(3);
    std::vector<Fixation> fix;
    for (int i = 0; i < 12; ++i) fix.push_back({rng.uniform(0, W - 1), rng.uniform(0, H - 1)});

    const std::vector<double> constant(n, 0.37);
    double worst_auc = 0;
    for (std::size_t k = 1; k <= fix.size(); ++k) {
        worst_auc = std::max(worst_auc, std::abs(auc_judd(constant, H, W, std::span(fix).first(k)) - 0.5));
    }
    bool nss_ok = true;
    for (const auto& f : fix) {
        const FlaggedValue v = nss(constant, H, W, f);
        nss_ok = nss_ok && v.flagged && v.value == 0;
    }
    std::vector<double> map(n);
    for (auto& v : map) v = rng.uniform();
    double worst_ig = 0;
    for (const auto& f : fix) worst_ig = std::max(worst_ig, std::abs(info_gain(map, map, H, W, f)));

    // SS(gt, gt) and human consistency of duplicated subjects on synthetic data.
    bool ss_ok = true, hc_ok = true;
    std::size_t scored = 0;
    for (Condition c : {Condition::TP, Condition::TA, Condition::FV}) {
        SynthParams sp;
        sp.condition = c;
        sp.images = 6;
        sp.subjects = 2;
        sp.jitter_px = 1.5;
        sp.id_prefix = to_string(c);
        const DatasetManifest m = synth_dataset(sp, work / ("identities_" + to_string(c)));
        const CanvasDataset data = load_canvas_dataset(m, H, W);
        const auto groups = group_scanpaths(data, {}, m.pixels_per_degree);
        for (const auto& g : groups) {
            for (const auto& s : g.ground_truth) {
                ss_ok = ss_ok && sequence_score(s, s, g.clustering).value == 1.0;
                ++scored;
            }
            ScanpathGroup twin = g;
            twin.ground_truth = {g.ground_truth.front(), g.ground_truth.front(), g.ground_truth.front()};
            const ConsistencyResult hc = human_consistency(std::span(&twin, 1));
            hc_ok = hc_ok && hc.groups == 1 && hc.value == 1.0;
        }
    }
    Outcome o;
    o.passed = worst_auc <= kIdentityTol && nss_ok && worst_ig <= kIdentityTol && ss_ok && hc_ok;
    o.detail = "|AUC-0.5| " + fmt("%.1e", worst_auc) + ", NSS flagged " + (nss_ok ? "yes" : "no") + ", |IG| " +
               fmt("%.1e", worst_ig) + ", SS(gt,gt)=1 on " + std::to_string(scored) + " scanpaths " +
               (ss_ok ? "yes" : "no") + ", HC=1 " + (hc_ok ? "yes" : "no");
    return o;
}

// --- 4 -----------------------------------------------------------------------

double attention_row_error(const Tensor& attention) {
    const auto v = attention.values();
    const auto len = static_cast<std::size_t>(attention.dim(attention.rank() - 1));
    double worst = 0;
    for (std::size_t r = 0; r < v.size() / len; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < len; ++j) s += v[r * len + j];
        worst = std::max(worst, std::abs(s - 1));
    }
    return worst;
}

Outcome architecture_contracts() {
    HatConfig cfg;
    cfg.canvas_height = 320;
    cfg.canvas_width = 512;
    cfg.channels = 32;
    cfg.task_names = {"red", "blue"};
    cfg.seed = 4;
    const HatModel model(cfg);
    Rng rng(4);
    std::vector<Scalar> pixels(3 * 320 * 512);
    for (auto& p : pixels) p = static_cast<Scalar>(rng.uniform());
    const Tensor image({3, 320, 512}, pixels);
    std::vector<Fixation> fix;
    for (int i = 0; i < 6; ++i) fix.push_back({rng.uniform(0, 511), rng.uniform(0, 319)});

    const FeaturePyramid pyr = model.extract_pyramid(image);
    bool sizes_ok = cfg.peripheral_tokens() == 160;
    for (std::size_t k = 0; k <= fix.size(); ++k) {
        const WorkingMemory mem = model.build_working_memory(pyr, std::span(fix).first(k));
        sizes_ok = sizes_ok && mem.peripheral_count() == 160 && mem.size() == 160 + static_cast<std::int64_t>(k);
    }

    double row_err = 0;
    bool ranges_ok = true;
    for (std::size_t k : {std::size_t{1}, std::size_t{3}, std::size_t{6}}) {
        const PredictionSet out = model.forward_all(image, std::span(fix).first(k));
        row_err = std::max(row_err, attention_row_error(out.cross_attention));
        for (const auto& a : out.encoder_attention) row_err = std::max(row_err, attention_row_error(a));
        for (const auto& a : out.decoder_self_attention) row_err = std::max(row_err, attention_row_error(a));
        for (const auto& a : out.decoder_cross_attention) row_err = std::max(row_err, attention_row_error(a));
        for (Scalar v : out.heatmaps.values()) ranges_ok = ranges_ok && v >= 0 && v <= 1;
        for (Scalar v : out.terminations.values()) ranges_ok = ranges_ok && v > 0 && v < 1;
    }

    double reuse_err = 0;
    bool same_path = true;
    for (GenerationMode mode : {GenerationMode::greedy, GenerationMode::sample}) {
        GenerationPolicy policy;
        policy.mode = mode;
        policy.max_len = 6;
        policy.threshold = 0.999;
        policy.seed = 11;
        policy.keep_heatmaps = true;
        const GeneratedScanpath fast = generate(model, image, 1, policy);
        policy.naive = true;
        const GeneratedScanpath slow = generate(model, image, 1, policy);
        same_path = same_path && fast.fixations == slow.fixations &&
                    fast.termination_probs.size() == slow.termination_probs.size();
        if (!same_path) break;
        for (std::size_t t = 0; t < fast.termination_probs.size(); ++t) {
            reuse_err = std::max(reuse_err, std::abs(fast.termination_probs[t] - slow.termination_probs[t]));
            for (std::size_t i = 0; i < fast.heatmaps[t].size(); ++i) {
                reuse_err = std::max(reuse_err, double(std::abs(fast.heatmaps[t][i] - slow.heatmaps[t][i])));
            }
        }
    }
    Outcome o;
    o.passed = sizes_ok && row_err <= kRowSumTol && ranges_ok && same_path && reuse_err <= kReuseTol;
    o.detail = std::string("tokens 160 and 160+k ") + (sizes_ok ? "yes" : "no") + ", attention row error " +
               fmt("%.1e", row_err) + ", output ranges " + (ranges_ok ? "ok" : "violated") +
               ", reuse vs naive " + (same_path ? "same path" : "different path") + " max diff " +
               fmt("%.1e", reuse_err);
    return o;
}

// --- 5 -----------------------------------------------------------------------

Outcome loss_contracts(const fs::path& work) {
    // Perfect prediction: 1 on the peak pixel, 0 elsewhere; both ends hit the boundary replacement.
    double worst_focal = 0;
    for (double sigma : {1.5, 4.0, 16.0}) {
        const Tensor y = make_gt_heatmap({20.3, 11.8}, 32, 48, sigma);
        std::vector<Scalar> peak(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) peak[i] = y[i] == 1 ? 1 : 0;
        worst_focal = std::max(worst_focal, double(focal_loss(Tensor(y.shape(), peak), y).item()));
    }
    const Tensor ones = Tensor::full({8, 8}, 1);
    const Tensor nearly = Tensor::full({8, 8}, static_cast<Scalar>(1 - kLossEpsilon));
    worst_focal = std::max(worst_focal, double(focal_loss(nearly, ones).item()));
    const double cases[3] = {std::abs(acceptance::termination_loss_64(0.5, 0, 1) - std::log(2.0)),
                             std::abs(acceptance::termination_loss_64(1 - 1e-12, 1, 1)),
                             std::abs(acceptance::termination_loss_64(0.5, 1, 3) - 3 * std::log(2.0))};
    const double worst_case = *std::max_element(cases, cases + 3);

    std::size_t manifests = 0;
    bool omega_ok = true;
    for (Condition c : {Condition::TP, Condition::TA, Condition::FV}) {
        for (int subjects : {1, 3}) {
            SynthParams sp;
            sp.condition = c;
            sp.images = 10;
            sp.subjects = subjects;
            sp.seed = 50 + manifests;
            const DatasetManifest m =
                synth_dataset(sp, work / ("omega_" + to_string(c) + "_" + std::to_string(subjects)));
            std::size_t non_terminal = 0, terminal = 0;
            for (const auto& r : m.records) {
                non_terminal += r.fixations.size() - 1;
                terminal += r.terminated ? 1 : 0;
            }
            const auto examples = expand_scanpaths(m);
            omega_ok = omega_ok && examples.size() == non_terminal + terminal &&
                       compute_omega(examples) == double(non_terminal) / double(terminal);
            ++manifests;
        }
    }
    Outcome o;
    o.passed = worst_focal < kFocalPerfect && worst_case <= kHandCaseTol && omega_ok;
    o.detail = "perfect focal " + fmt("%.1e", worst_focal) + ", termination hand cases (64-bit) max error " +
               fmt("%.1e", worst_case) + ", omega recount on " + std::to_string(manifests) + " manifests " +
               (omega_ok ? "ok" : "mismatch");
    return o;
}

// --- shared desk-scale training ---------------------------------------------

struct DeskRun {
    RunConfig run;
    CanvasDataset data;
    std::unique_ptr<HatModel> model;
    FitResult fit;
    double seconds = 0;
};

DeskRun train_desk(const DatasetManifest& manifest, int epochs) {
    DeskRun d;
    d.run.canvas_height = 64;
    d.run.canvas_width = 64;
    d.run.channels = kDeskChannels;
    d.run.epochs = epochs;
    d.data = load_canvas_dataset(manifest, 64, 64);
    d.model = std::make_unique<HatModel>(model_config(d.run, manifest));
    const auto t0 = Clock::now();
    d.fit = fit(*d.model, d.data, fit_options(d.run, canvas_pixels_per_degree(d.data)));
    d.seconds = since(t0);
    return d;
}

std::vector<ScanpathRecord> greedy_canvas_paths(const HatModel& model, const CanvasDataset& data) {
    std::vector<ScanpathRecord> out;
    for (const auto& g : generate_for_dataset(model, data, GenerationRequest{})) {
        out.push_back(g.path.to_record(data.manifest.images[g.image].id, g.task, "model", g.condition));
    }
    return out;
}

// --- 6 -----------------------------------------------------------------------

Outcome desk_learning(const fs::path& work) {
    const DatasetManifest m = synth_dataset(SynthParams{}, work / "desk");
    const DeskRun d = train_desk(m, kDeskEpochs);
    const double first = d.fit.log.front().total, last = d.fit.log.back().total;
    const auto preds = greedy_canvas_paths(*d.model, d.data);
    const MetricParams params = metric_params(d.run, canvas_pixels_per_degree(d.data));
    const MetricReport report = evaluate_scanpaths(group_scanpaths(d.data, preds, params.bandwidth_px), params);
    const double ss = report.ss.value_or(0);
    Outcome o;
    o.passed = last <= kLossDropRatio * first && ss >= kTrainSS && d.seconds < kTrainSeconds;
    o.detail = "loss " + fmt("%.4f", first) + " -> " + fmt("%.4f", last) + " (" + fmt("%.1f%%", 100 * last / first) +
               "), greedy SS " + fmt("%.3f", ss) + ", " + fmt("%.0f s", d.seconds);
    return o;
}

// --- 7 and 8 -----------------------------------------------------------------

struct Generalization {
    DatasetManifest train, held_out;
    DeskRun desk;
};

Generalization& generalization(const fs::path& work) {
    static std::unique_ptr<Generalization> g;
    if (!g) {
        g = std::make_unique<Generalization>();
        SynthParams tp;
        tp.images = kGeneralizationTrain;
        g->train = synth_dataset(tp, work / "train64");
        SynthParams hp;
        hp.images = kGeneralizationHeldOut;
        hp.seed = 8;
        hp.id_prefix = "held";
        g->held_out = synth_dataset(hp, work / "held32");
        g->desk = train_desk(g->train, kGeneralizationEpochs);
    }
    return *g;
}

Outcome desk_generalization(const fs::path& work) {
    Generalization& g = generalization(work);
    const CanvasDataset held = load_canvas_dataset(g.held_out, 64, 64);
    const auto groups = generate_for_dataset(*g.desk.model, held, GenerationRequest{});
    std::size_t hits = 0, stops = 0;
    for (const auto& gg : groups) {
        const auto& objects = held.manifest.images[gg.image].objects;
        const auto target = std::find_if(objects.begin(), objects.end(), [](const SceneObject& o) {
            return o.kind == "target";
        });
        const auto& f = gg.path.fixations;
        if (target != objects.end() && f.size() > 1 &&
            std::hypot(f[1].x - target->x, f[1].y - target->y) <= target->radius) {
            ++hits;
        }
        if (gg.path.terminated_by == TerminatedBy::threshold) ++stops;
    }
    const double n = static_cast<double>(groups.size());
    Outcome o;
    o.passed = groups.size() == kGeneralizationHeldOut && hits >= kHitRate * n && stops >= kStopRate * n;
    o.detail = "first fixation on target " + std::to_string(hits) + "/" + std::to_string(groups.size()) +
               ", stopped by threshold " + std::to_string(stops) + "/" + std::to_string(groups.size()) + "; trained " +
               std::to_string(kGeneralizationEpochs) + " epochs in " + fmt("%.0f s", g.desk.seconds);
    return o;
}

Outcome conditional_sanity(const fs::path& work) {
    Generalization& g = generalization(work);
    const CanvasDataset train = load_canvas_dataset(g.train, 64, 64);
    const double ppd = canvas_pixels_per_degree(train);
    const auto baseline = build_baseline_density(train.manifest.records, g.train.tasks, 64, 64, ppd);

    SynthParams bp;
    bp.images = kBaselineImages;
    bp.seed = 9;
    bp.id_prefix = "base";
    const CanvasDataset many = load_canvas_dataset(synth_dataset(bp, work / "baseline_eval"), 64, 64);
    const NextFixationPredictor as_baseline = [&](const ScanpathRecord& r, std::size_t) { return baseline.at(r.task); };
    const ConditionalResult b = conditional_eval(many.manifest.records, 64, 64, as_baseline, baseline);

    const CanvasDataset held = load_canvas_dataset(g.held_out, 64, 64);
    const ConditionalResult m =
        conditional_eval(held.manifest.records, 64, 64, model_predictor(*g.desk.model, held), baseline);

    Outcome o;
    o.passed = std::abs(b.cig) <= kBaselineIgTol && std::abs(b.cauc - 0.5) <= kBaselineAucTol && m.cig > 0 &&
               m.cnss > 0;
    o.detail = "baseline as model: cIG " + fmt("%.1e", b.cig) + ", cAUC " + fmt("%.4f", b.cauc) + " over " +
               std::to_string(b.steps) + " steps; trained model on held-out: cIG " + fmt("%.3f", m.cig) + ", cNSS " +
               fmt("%.3f", m.cnss) + ", cAUC " + fmt("%.3f", m.cauc);
    return o;
}

// --- 9 -----------------------------------------------------------------------

Outcome interpretability(const fs::path& work) {
    Generalization& g = generalization(work);
    const HatModel& model = *g.desk.model;
    const CanvasDataset held = load_canvas_dataset(g.held_out, 64, 64);
    const int rows = model.config().peripheral_rows(), cols = model.config().peripheral_cols();

    double map_err = 0;
    std::size_t maps = 0;
    for (const auto& r : held.manifest.records) {
        const Tensor image = image_tensor(held.images[held.manifest.image_index(r.image)]);
        for (std::size_t k = 1; k <= r.fixations.size(); ++k) {
            const TaskOutput out = model.forward(image, std::span(r.fixations).first(k), model.task_index(r.task));
            const ContributionMap cm = contribution_map(out.all.cross_attention, model.task_index(r.task), rows, cols);
            double s = 0;
            for (double w : cm.weights) s += w;
            map_err = std::max(map_err, std::abs(s - 1));
            ++maps;
        }
    }
    const ContributionMap category = category_contribution_map(model, held, held.manifest.tasks.front());
    double cs = 0;
    for (double w : category.weights) cs += w;
    map_err = std::max(map_err, std::abs(cs - 1));

    std::vector<Tensor> images;
    std::vector<std::vector<Fixation>> paths;
    for (const auto& gg : generate_for_dataset(model, held, GenerationRequest{})) {
        images.push_back(image_tensor(held.images[gg.image]));
        paths.push_back(gg.path.fixations);
    }
    const ContributionMatrix matrix = contribution_matrix(model, images, paths, 0);
    double row_err = 0;
    std::size_t populated = 0;
    for (std::size_t r = 0; r < matrix.rows(); ++r) {
        if (matrix.counts[r][0] == 0) continue;
        row_err = std::max(row_err, std::abs(matrix.row_sum(r) - 1));
        ++populated;
    }

    // One peripheral token and no fixations: the memory holds a single token.
    HatConfig tiny;
    tiny.canvas_height = 32;
    tiny.canvas_width = 32;
    tiny.channels = 8;
    const HatModel single(tiny);
    const Tensor image = Tensor::full({3, 32, 32}, Scalar(0.5));
    const TaskOutput out = single.forward(image, std::span<const Fixation>{}, 0);
    const ContributionMap renorm = contribution_map(out.all.cross_attention, 0, 1, 1, true);
    const ContributionMap raw = contribution_map(out.all.cross_attention, 0, 1, 1, false);
    const bool single_ok = renorm.weights.size() == 1 && renorm.weights[0] == 1.0 && raw.weights[0] == 1.0;
    (void)work;

    Outcome o;
    o.passed = map_err <= kRowSumTol && populated > 0 && row_err <= kRowSumTol && single_ok;
    o.detail = std::to_string(maps + 1) + " maps, max |sum-1| " + fmt("%.1e", map_err) + "; " +
               std::to_string(populated) + " populated matrix rows, max |sum-1| " + fmt("%.1e", row_err) +
               "; single-token weight " + fmt("%.17g", renorm.weights.empty() ? 0.0 : renorm.weights[0]);
    return o;
}

// --- 10 ----------------------------------------------------------------------

std::map<std::string, std::string> snapshot_dir(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::ifstream f(e.path(), std::ios::binary);
        std::ostringstream ss;
        ss << f.rdbuf();
        out[fs::relative(e.path(), dir).generic_string()] = ss.str();
    }
    return out;
}

int cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv = {"hat"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int rc = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    if (rc != 0) std::cerr << "hat " << args.front() << " exited " << rc << ": " << err.str();
    return rc;
}

Outcome reproducibility(const fs::path& work) {
    const fs::path root = work / "repro";
    fs::remove_all(root);
    const std::string d = (root / "data").string(), t = (root / "train").string(), g = (root / "gen").string(),
                      s = (root / "sample").string(), e = (root / "eval").string(), i = (root / "inspect").string(),
                      c = (root / "gradcheck").string();
    const std::string manifest = d + "/manifest.jsonl", ckpt = t + "/checkpoint.hatckpt";
    const std::vector<std::vector<std::string>> commands = {
        {"synth", "--out", d, "--images", "6", "--subjects", "2", "--jitter", "1"},
        {"train", "--manifest", manifest, "--out", t, "--canvas-height", "64", "--canvas-width", "64", "--channels",
         "8", "--epochs", "4", "--batch", "4", "--seed", "5"},
        {"generate", "--manifest", manifest, "--checkpoint", ckpt, "--out", g, "--dump-heatmaps",
         "--dump-contributions"},
        {"generate", "--manifest", manifest, "--checkpoint", ckpt, "--out", s, "--mode", "sample", "--samples", "3",
         "--seed", "13"},
        {"evaluate", "--manifest", manifest, "--predictions", s + "/predictions.jsonl", "--checkpoint", ckpt, "--out",
         e},
        {"inspect", "--manifest", manifest, "--checkpoint", ckpt, "--out", i},
        {"gradcheck", "--precision", "0", "--out", c},
    };
    std::size_t files = 0, differing = 0;
    std::string first_diff;
    for (const auto& cmd : commands) {
        if (cli(cmd) != 0) return {false, "command '" + cmd.front() + "' failed"};
        const fs::path out = cmd[std::find(cmd.begin(), cmd.end(), "--out") - cmd.begin() + 1];
        const auto before = snapshot_dir(out);
        if (cli(cmd) != 0) return {false, "rerun of '" + cmd.front() + "' failed"};
        const auto after = snapshot_dir(out);
        files += before.size();
        for (const auto& [name, bytes] : before) {
            const auto it = after.find(name);
            if (it == after.end() || it->second != bytes) {
                ++differing;
                if (first_diff.empty()) first_diff = cmd.front() + ":" + name;
            }
        }
        if (after.size() != before.size()) ++differing;
    }
    Outcome o;
    o.passed = differing == 0 && files > 0;
    o.detail = std::to_string(commands.size()) + " commands rerun, " + std::to_string(files) + " files compared, " +
               std::to_string(differing) + " differ" + (first_diff.empty() ? "" : " (first " + first_diff + ")");
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    fs::path work = "acceptance_work";
    std::vector<int> only;
    for (int a = 1; a < argc; ++a) {
        const std::string arg = argv[a];
        if (arg == "--only" && a + 1 < argc) {
            std::stringstream ss(argv[++a]);
            std::string item;
            while (std::getline(ss, item, ',')) only.push_back(std::stoi(item));
        } else {
            work = arg;
        }
    }
    fs::remove_all(work);
    fs::create_directories(work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient fidelity", gradient_fidelity},
        {"alignment oracle", alignment_oracle},
        {"metric identities", [&] { return metric_identities(work); }},
        {"architecture contracts", architecture_contracts},
        {"loss contracts", [&] { return loss_contracts(work); }},
        {"desk-scale learning", [&] { return desk_learning(work); }},
        {"desk-scale generalization", [&] { return desk_generalization(work); }},
        {"conditional evaluation sanity", [&] { return conditional_sanity(work); }},
        {"interpretability contracts", [&] { return interpretability(work); }},
        {"reproducibility", [&] { return reproducibility(work); }},
    };
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& ex) {
            o = {false, std::string("exception: ") + ex.what()};
        }
        failed += o.passed ? 0 : 1;
        std::cout << (o.passed ? "PASS" : "FAIL") << "  criterion " << id << " " << criteria[k].first << ": "
                  << o.detail << std::endl;
    }
    std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << std::endl;
    return failed ? 1 : 0;
}
