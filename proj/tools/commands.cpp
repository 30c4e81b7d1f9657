#include "commands.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>

#include "CLI11.hpp"
#include "hat/gradcheck_suite.hpp"
#include "hat/interpret.hpp"
#include "hat/pipeline.hpp"
#include "hat/synth.hpp"
#include "hat/training.hpp"

namespace hat {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Flags land in a JSON object of RunConfig keys and are applied on top of
// --config, so a flag always wins over the file.
struct Overrides {
    std::string config_file;
    json values = json::object();
};

template <typename T>
void option(CLI::App* app, const std::string& name, const char* key, json& values, const std::string& help) {
    app->add_option_function<T>(name, [&values, key](const T& v) { values[key] = v; }, help);
}

void flag(CLI::App* app, const std::string& name, const char* key, json& values, const std::string& help) {
    app->add_flag_function(name, [&values, key](std::int64_t) { values[key] = true; }, help);
}

RunConfig resolve(const std::string& subcommand, const Overrides& ov) {
    RunConfig c = ov.config_file.empty() ? RunConfig{} : RunConfig::load(ov.config_file);
    c.apply(ov.values);
    c.subcommand = subcommand;
    c.validate();
    return c;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path prepare_out(const RunConfig& c) {
    const fs::path out = c.out_dir;
    fs::create_directories(out);
    c.save(out / "config.resolved.json");
    return out;
}

void need(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

DatasetManifest load_checked(const std::string& path) {
    need(!path.empty(), "a manifest is required (--manifest)");
    DatasetManifest m = load_manifest(path);
    validate_manifest(m);
    return m;
}

std::string safe_name(std::string s) {
    for (char& ch : s) {
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
    }
    return s;
}

// --- synth -------------------------------------------------------------------

struct SynthArgs {
    std::string config_file;
    std::string out_dir = "synth";
    json values = json::object();
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
    json j = json::object();
    if (!a.config_file.empty()) {
        std::ifstream f(a.config_file);
        if (!f) throw IoError("cannot open config " + a.config_file);
        f >> j;
    }
    j.merge_patch(a.values);
    const SynthParams p = SynthParams::from_json(j);
    const fs::path dir = a.out_dir;
    fs::create_directories(dir);
    const DatasetManifest m = synth_dataset(p, dir);
    validate_manifest(m);
    write_json(dir / "config.resolved.json", {{"subcommand", "synth"}, {"out_dir", a.out_dir}, {"synth", p.to_json()}});
    out << "wrote " << m.images.size() << " images and " << m.records.size() << " scanpaths to "
        << (dir / "manifest.jsonl").string() << "\n";
    return 0;
}

// --- train -------------------------------------------------------------------

int cmd_train(const RunConfig& c, std::ostream& out) {
    const DatasetManifest manifest = load_checked(c.manifest);
    const CanvasDataset data = load_canvas_dataset(manifest, c.canvas_height, c.canvas_width);
    HatModel model(model_config(c, manifest));
    const fs::path dir = prepare_out(c);

    const FitOptions fo = fit_options(c, canvas_pixels_per_degree(data, c.pixels_per_degree));

    std::ofstream log(dir / "loss_log.jsonl", std::ios::binary);
    if (!log) throw IoError("cannot write " + (dir / "loss_log.jsonl").string());
    const FitResult result = fit(model, data, fo, [&](const EpochLog& e) {
        log << e.to_json().dump() << "\n";
        out << "epoch " << e.epoch << "  L " << std::setprecision(6) << e.total << "  L_fix " << e.fixation
            << "  L_term " << e.termination << "\n";
    });
    model.save(dir / "checkpoint.hatckpt");

    json summary{{"examples", result.examples},
                 {"omega", result.omega},
                 {"sigma_px", fo.loss.sigma_px},
                 {"epochs", c.epochs},
                 {"parameters", model.parameter_count()},
                 {"model", model.config().to_json()}};
    summary["first_epoch"] = result.log.empty() ? json(nullptr) : result.log.front().to_json();
    summary["final_epoch"] = result.log.empty() ? json(nullptr) : result.log.back().to_json();
    write_json(dir / "train_summary.json", summary);
    out << "checkpoint: " << (dir / "checkpoint.hatckpt").string() << "\n";
    return 0;
}

// --- generate ----------------------------------------------------------------

int cmd_generate(RunConfig c, std::ostream& out) {
    need(!c.checkpoint.empty(), "a checkpoint is required (--checkpoint)");
    const DatasetManifest manifest = load_checked(c.manifest);
    const HatModel model = HatModel::load(c.checkpoint);
    c.canvas_height = model.config().canvas_height;
    c.canvas_width = model.config().canvas_width;
    const CanvasDataset data = load_canvas_dataset(manifest, c.canvas_height, c.canvas_width);
    const fs::path dir = prepare_out(c);

    GenerationRequest req;
    req.mode = parse_generation_mode(c.mode);
    req.max_len = c.max_len;
    req.threshold = c.threshold;
    req.samples = c.samples;
    req.seed = c.seed;
    req.keep_heatmaps = c.dump_heatmaps;
    const auto groups = generate_for_dataset(model, data, req);

    DatasetManifest predictions = manifest;
    predictions.records.clear();
    for (const auto& g : groups) predictions.records.push_back(to_manifest_record(g, data));
    predictions.generator = {{"source", "model"},
                             {"checkpoint", c.checkpoint},
                             {"mode", c.mode},
                             {"max_len", c.max_len},
                             {"threshold", c.threshold},
                             {"samples", c.samples},
                             {"seed", c.seed}};
    save_manifest(predictions, dir / "predictions.jsonl");

    if (c.dump_heatmaps) {
        const fs::path hdir = dir / "heatmaps";
        fs::create_directories(hdir);
        for (const auto& g : groups) {
            const std::string stem = safe_name(data.manifest.images[g.image].id + "_" + g.task) + "_s" +
                                     std::to_string(g.sample);
            for (std::size_t t = 0; t < g.path.heatmaps.size(); ++t) {
                write_heatmap(std::span<const float>(g.path.heatmaps[t]), data.height, data.width,
                              hdir / (stem + "_t" + std::to_string(t) + ".pfm"), HeatmapFormat::pfm);
            }
        }
    }
    if (c.dump_contributions) {
        const fs::path cdir = dir / "contributions";
        fs::create_directories(cdir);
        for (const auto& task : model.config().task_names) {
            std::vector<Tensor> images;
            std::vector<std::vector<Fixation>> paths;
            for (const auto& g : groups) {
                if (g.task != task) continue;
                images.push_back(image_tensor(data.images[g.image]));
                paths.push_back(g.path.fixations);
            }
            if (paths.empty()) continue;
            const ContributionMatrix matrix = contribution_matrix(model, images, paths, model.task_index(task));
            write_text(cdir / (safe_name(task) + "_matrix.csv"), matrix.to_csv());
            const ContributionMap map = category_contribution_map(model, data, task);
            write_heatmap(std::span<const double>(map.weights), map.rows, map.cols,
                          cdir / (safe_name(task) + "_map.pfm"), HeatmapFormat::pfm);
        }
    }
    out << "generated " << groups.size() << " scanpaths: " << (dir / "predictions.jsonl").string() << "\n";
    return 0;
}

// --- evaluate ----------------------------------------------------------------

int cmd_evaluate(RunConfig c, std::ostream& out) {
    const DatasetManifest gt = load_checked(c.manifest);
    std::optional<HatModel> model;
    if (!c.checkpoint.empty()) {
        model.emplace(HatModel::load(c.checkpoint));
        c.canvas_height = model->config().canvas_height;
        c.canvas_width = model->config().canvas_width;
    }
    const CanvasDataset data = load_canvas_dataset(gt, c.canvas_height, c.canvas_width);
    const MetricParams params = metric_params(c, canvas_pixels_per_degree(data, c.pixels_per_degree));
    const fs::path dir = prepare_out(c);

    std::vector<ScanpathRecord> predicted;
    if (!c.predictions.empty()) predicted = canvas_records(load_checked(c.predictions), data.height, data.width);
    const auto groups = group_scanpaths(data, predicted, params.bandwidth_px);
    MetricReport report = evaluate_scanpaths(groups, params);

    if (model) {
        std::vector<ScanpathRecord> fit_records = data.manifest.records;
        if (!c.baseline_manifest.empty()) {
            fit_records = canvas_records(load_checked(c.baseline_manifest), data.height, data.width);
        }
        const auto baseline =
            build_baseline_density(fit_records, gt.tasks, data.height, data.width, params.sigma_px);
        report.conditional =
            conditional_eval(data.manifest.records, data.height, data.width, model_predictor(*model, data), baseline);
    }
    write_json(dir / "metrics.json", report.to_json());
    const std::string csv = report.to_csv();
    write_text(dir / "metrics.csv", csv);
    out << csv;
    return 0;
}

// --- inspect -----------------------------------------------------------------

int cmd_inspect(const RunConfig& c, std::ostream& out) {
    need(!c.manifest.empty() || !c.checkpoint.empty(), "inspect needs --manifest and/or --checkpoint");
    json j = json::object();
    if (!c.manifest.empty()) {
        const DatasetManifest m = load_checked(c.manifest);
        std::map<std::string, int> conditions;
        std::size_t fixations = 0, longest = 0, terminated = 0;
        for (const auto& r : m.records) {
            ++conditions[to_string(r.condition)];
            fixations += r.fixations.size();
            longest = std::max(longest, r.fixations.size());
            terminated += r.terminated;
        }
        const auto examples = expand_scanpaths(m);
        json mj{{"images", m.images.size()},
                {"records", m.records.size()},
                {"tasks", m.tasks},
                {"conditions", conditions},
                {"pixels_per_degree", m.pixels_per_degree},
                {"longest_scanpath", longest},
                {"terminated", terminated},
                {"training_examples", examples.size()}};
        mj["mean_scanpath_length"] =
            m.records.empty() ? json(nullptr) : json(double(fixations) / static_cast<double>(m.records.size()));
        try {
            mj["omega"] = compute_omega(examples);
        } catch (const ConfigError&) {
            mj["omega"] = nullptr;
        }
        j["manifest"] = mj;
    }
    if (!c.checkpoint.empty()) {
        const HatModel model = HatModel::load(c.checkpoint);
        j["checkpoint"] = {{"config", model.config().to_json()},
                           {"parameters", model.parameter_count()},
                           {"peripheral_tokens", model.config().peripheral_tokens()},
                           {"scalar_bits", kScalarBits}};
    }
    const fs::path dir = prepare_out(c);
    write_json(dir / "inspect.json", j);
    out << j.dump(2) << "\n";
    return 0;
}

// --- gradcheck ---------------------------------------------------------------

int cmd_gradcheck(const RunConfig& c, std::ostream& out) {
    const fs::path dir = prepare_out(c);
    GradCheckSuiteOptions o;
    o.seed = c.seed;
    std::vector<GradCheckSuiteReport> reports;
    if (c.precision == 32 || c.precision == 0) reports.push_back(run_gradcheck_suite_32(o));
    if (c.precision == 64 || c.precision == 0) reports.push_back(run_gradcheck_suite_64(o));

    bool passed = true;
    json j{{"reports", json::array()}};
    for (const auto& r : reports) {
        out << r.scalar_bits << "-bit\n";
        for (const auto& f : r.families) {
            out << "  " << std::left << std::setw(22) << f.family << std::right << std::scientific
                << std::setprecision(2) << f.max_relative_error << " < " << f.threshold << "  "
                << (f.passed ? "ok" : "FAIL") << "  (" << f.worst_input << ")\n";
        }
        out << "  worst: " << r.worst_family << " " << r.worst_error << std::defaultfloat << "\n";
        passed = passed && r.passed;
        j["reports"].push_back(r.to_json());
    }
    j["passed"] = passed;
    write_json(dir / "gradcheck.json", j);
    out << (passed ? "gradcheck passed\n" : "gradcheck FAILED\n");
    return passed ? 0 : 1;
}

void run_options(CLI::App* app, Overrides& ov) {
    app->add_option("--config", ov.config_file, "JSON run config; flags override its values");
    option<std::string>(app, "--out", "out_dir", ov.values, "run directory for all outputs");
    option<std::uint64_t>(app, "--seed", "seed", ov.values, "seed of the run's generator");
}

void model_options(CLI::App* app, Overrides& ov) {
    option<int>(app, "--canvas-height", "canvas_height", ov.values, "canvas height (multiple of 32)");
    option<int>(app, "--canvas-width", "canvas_width", ov.values, "canvas width (multiple of 32)");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"hat: scanpath prediction with foveated working memory"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "generate a synthetic dataset");
    s->add_option("--config", synth.config_file, "JSON synth parameters; flags override its values");
    s->add_option("--out", synth.out_dir, "output directory")->capture_default_str();
    option<std::uint64_t>(s, "--seed", "seed", synth.values, "generator seed");
    option<int>(s, "--images", "images", synth.values, "number of images");
    option<std::string>(s, "--condition", "condition", synth.values, "TP, TA or FV");
    option<int>(s, "--canvas-height", "canvas_height", synth.values, "image height");
    option<int>(s, "--canvas-width", "canvas_width", synth.values, "image width");
    option<int>(s, "--subjects", "subjects", synth.values, "scanpaths per image and task");
    option<int>(s, "--tasks", "num_tasks", synth.values, "number of search colours");
    option<double>(s, "--radius", "blob_radius", synth.values, "blob radius in pixels");
    option<double>(s, "--ppd", "pixels_per_degree", synth.values, "pixels per degree");
    option<double>(s, "--detour", "detour_prob", synth.values, "per-step detour probability (TP)");
    option<int>(s, "--min-blobs", "min_blobs", synth.values, "fewest non-target blobs");
    option<int>(s, "--max-blobs", "max_blobs", synth.values, "most non-target blobs");
    option<double>(s, "--jitter", "jitter_px", synth.values, "fixation jitter std in pixels");
    option<int>(s, "--max-len", "max_len", synth.values, "scanpath cap; 0 uses the condition's");
    option<std::string>(s, "--prefix", "id_prefix", synth.values, "image id prefix");

    Overrides train;
    auto* t = app.add_subcommand("train", "train a model by behavior cloning");
    run_options(t, train);
    model_options(t, train);
    option<std::string>(t, "--manifest", "manifest", train.values, "training manifest");
    option<int>(t, "--channels", "channels", train.values, "model width C");
    option<int>(t, "--heads", "heads", train.values, "attention heads");
    option<int>(t, "--encoder-layers", "encoder_layers", train.values, "encoder layers");
    option<int>(t, "--decoder-layers", "decoder_layers", train.values, "decoder layers");
    option<int>(t, "--mlp-hidden", "mlp_hidden", train.values, "hidden width of the heatmap MLP");
    option<int>(t, "--ffn-hidden", "ffn_hidden", train.values, "FFN width; 0 uses 4C");
    flag(t, "--freeze-encoder", "freeze_encoder", train.values, "keep the pixel encoder fixed");
    option<double>(t, "--lr", "lr", train.values, "learning rate");
    option<double>(t, "--weight-decay", "weight_decay", train.values, "decoupled weight decay");
    option<int>(t, "--epochs", "epochs", train.values, "epochs");
    option<int>(t, "--batch", "batch", train.values, "batch size");
    option<double>(t, "--omega", "omega", train.values, "termination positive weight; 0 computes it");
    option<double>(t, "--sigma", "sigma_px", train.values, "target Gaussian std in canvas pixels");
    option<double>(t, "--ppd", "pixels_per_degree", train.values, "canvas pixels per degree");

    Overrides gen;
    auto* g = app.add_subcommand("generate", "generate scanpaths for every image and task of a manifest");
    run_options(g, gen);
    option<std::string>(g, "--manifest", "manifest", gen.values, "manifest with images and initial fixations");
    option<std::string>(g, "--checkpoint", "checkpoint", gen.values, "trained checkpoint");
    option<std::string>(g, "--mode", "mode", gen.values, "greedy or sample");
    option<int>(g, "--max-len", "max_len", gen.values, "fixation cap; 0 uses the condition's");
    option<double>(g, "--threshold", "threshold", gen.values, "termination threshold");
    option<int>(g, "--samples", "samples", gen.values, "scanpaths per image and task");
    flag(g, "--dump-heatmaps", "dump_heatmaps", gen.values, "write per-step heatmaps");
    flag(g, "--dump-contributions", "dump_contributions", gen.values, "write contribution maps and matrices");

    Overrides ev;
    auto* e = app.add_subcommand("evaluate", "score predictions against ground truth");
    run_options(e, ev);
    model_options(e, ev);
    option<std::string>(e, "--manifest", "manifest", ev.values, "ground-truth manifest");
    option<std::string>(e, "--predictions", "predictions", ev.values, "predicted scanpaths");
    option<std::string>(e, "--checkpoint", "checkpoint", ev.values, "model for cIG/cNSS/cAUC");
    option<std::string>(e, "--baseline-manifest", "baseline_manifest", ev.values,
                        "training split for the baseline density");
    option<double>(e, "--ppd", "pixels_per_degree", ev.values, "canvas pixels per degree");
    option<double>(e, "--bandwidth", "bandwidth_px", ev.values, "mean-shift bandwidth in canvas pixels");
    option<double>(e, "--sigma", "sigma_px", ev.values, "baseline Gaussian std in canvas pixels");
    option<double>(e, "--match", "match_reward", ev.values, "alignment match reward");
    option<double>(e, "--mismatch", "mismatch_penalty", ev.values, "alignment mismatch penalty");
    option<double>(e, "--gap", "gap_penalty", ev.values, "alignment gap penalty");
    option<double>(e, "--epsilon", "ig_epsilon", ev.values, "information-gain epsilon");
    option<double>(e, "--recall-threshold", "recall_threshold", ev.values, "SS threshold for recall");

    Overrides ins;
    auto* i = app.add_subcommand("inspect", "summarize a manifest and/or checkpoint");
    run_options(i, ins);
    option<std::string>(i, "--manifest", "manifest", ins.values, "manifest");
    option<std::string>(i, "--checkpoint", "checkpoint", ins.values, "checkpoint");

    Overrides gc;
    auto* c = app.add_subcommand("gradcheck", "check gradients of every op family and a small model");
    run_options(c, gc);
    option<int>(c, "--precision", "precision", gc.values, "32, 64 or 0 for both");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& ex) {
        return app.exit(ex, out, err) == 0 ? 0 : 2;
    }

    try {
        if (s->parsed()) return cmd_synth(synth, out);
        if (t->parsed()) return cmd_train(resolve("train", train), out);
        if (g->parsed()) return cmd_generate(resolve("generate", gen), out);
        if (e->parsed()) return cmd_evaluate(resolve("evaluate", ev), out);
        if (i->parsed()) return cmd_inspect(resolve("inspect", ins), out);
        if (c->parsed()) return cmd_gradcheck(resolve("gradcheck", gc), out);
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return 2;
    }
    return 2;
}

}  // namespace hat
