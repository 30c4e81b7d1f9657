#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "commands.hpp"
#include "hat/gradcheck_suite.hpp"
#include "hat/inference.hpp"
#include "hat/metrics.hpp"
#include "hat/synth.hpp"
#include "hat/training.hpp"

namespace py = pybind11;
using namespace hat;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<Fixation> to_fixations(const std::vector<std::pair<double, double>>& xy) {
    std::vector<Fixation> out;
    out.reserve(xy.size());
    for (const auto& [x, y] : xy) out.push_back({x, y});
    return out;
}

std::vector<std::pair<double, double>> from_fixations(const std::vector<Fixation>& f) {
    std::vector<std::pair<double, double>> out;
    for (const auto& p : f) out.emplace_back(p.x, p.y);
    return out;
}

// 2-D array as (values, height, width).
std::vector<double> map_values(const Array& a, int& height, int& width) {
    if (a.ndim() != 2) throw py::value_error("expected a 2-D array");
    height = static_cast<int>(a.shape(0));
    width = static_cast<int>(a.shape(1));
    return {a.data(), a.data() + a.size()};
}

Tensor to_tensor(const Array& a) {
    Shape shape;
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(a.shape(i));
    return Tensor(std::move(shape), std::vector<Scalar>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    auto v = t.values();
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::dict record_dict(const ScanpathRecord& r) {
    py::dict d;
    d["image"] = r.image;
    d["task"] = r.task;
    d["subject"] = r.subject;
    d["condition"] = to_string(r.condition);
    d["fixations"] = from_fixations(r.fixations);
    d["terminated"] = r.terminated;
    return d;
}

}  // namespace

PYBIND11_MODULE(_hat, m) {
    m.doc() = "Scanpath prediction core";

    py::register_exception<Error>(m, "HatError", PyExc_RuntimeError);

    m.def(
        "run_cli",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "hat");
            std::vector<const char*> argv;
            for (const auto& a : args) argv.push_back(a.c_str());
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a hat subcommand; returns (exit code, stdout, stderr).");

    m.def(
        "synth",
        [](const std::string& out_dir, const std::string& params_json) {
            const SynthParams p = SynthParams::from_json(nlohmann::json::parse(params_json));
            const DatasetManifest man = synth_dataset(p, out_dir);
            return (std::filesystem::path(out_dir) / "manifest.jsonl").string();
        },
        py::arg("out_dir"), py::arg("params_json") = "{}");

    m.def(
        "load_records",
        [](const std::string& path) {
            const DatasetManifest man = load_manifest(path);
            py::list out;
            for (const auto& r : man.records) out.append(record_dict(r));
            return out;
        },
        py::arg("path"));

    m.def(
        "nw_align",
        [](const std::vector<int>& a, const std::vector<int>& b, double match, double mismatch, double gap) {
            const AlignmentScore s = nw_align(a, b, {match, mismatch, gap});
            return py::make_tuple(s.score, s.empty);
        },
        py::arg("a"), py::arg("b"), py::arg("match") = 1.0, py::arg("mismatch") = 0.0, py::arg("gap") = 0.0);

    m.def(
        "sequence_score",
        [](const std::vector<std::pair<double, double>>& pred, const std::vector<std::pair<double, double>>& gt,
           double bandwidth) {
            auto all = to_fixations(gt);
            const auto p = to_fixations(pred);
            const ClusterAssignment c = cluster_fixations(all, bandwidth);
            return sequence_score(p, all, c).value;
        },
        py::arg("pred"), py::arg("gt"), py::arg("bandwidth"),
        "SS with clusters fitted on the ground-truth fixations.");

    m.def(
        "nss",
        [](const Array& map, double x, double y) {
            int h, w;
            const auto v = map_values(map, h, w);
            const FlaggedValue r = nss(v, h, w, {x, y});
            return py::make_tuple(r.value, r.flagged);
        },
        py::arg("map"), py::arg("x"), py::arg("y"));

    m.def(
        "auc",
        [](const Array& map, const std::vector<std::pair<double, double>>& fixations) {
            int h, w;
            const auto v = map_values(map, h, w);
            return auc_judd(v, h, w, to_fixations(fixations));
        },
        py::arg("map"), py::arg("fixations"));

    m.def(
        "info_gain",
        [](const Array& map, const Array& baseline, double x, double y, double eps) {
            int h, w, hb, wb;
            const auto v = map_values(map, h, w);
            const auto b = map_values(baseline, hb, wb);
            if (h != hb || w != wb) throw py::value_error("map and baseline differ in shape");
            return info_gain(v, b, h, w, {x, y}, eps);
        },
        py::arg("map"), py::arg("baseline"), py::arg("x"), py::arg("y"), py::arg("eps") = kInfoGainEpsilon);

    m.def(
        "gt_heatmap",
        [](double x, double y, int height, int width, double sigma) {
            return to_array(make_gt_heatmap({x, y}, height, width, sigma));
        },
        py::arg("x"), py::arg("y"), py::arg("height"), py::arg("width"), py::arg("sigma"));

    m.def(
        "focal_loss",
        [](const Array& pred, const Array& target, double alpha, double beta) {
            return double(focal_loss(to_tensor(pred), to_tensor(target), alpha, beta).item());
        },
        py::arg("prediction"), py::arg("target"), py::arg("alpha") = 2.0, py::arg("beta") = 4.0);

    m.def(
        "termination_loss",
        [](double p, double tau, double omega) {
            return double(termination_loss(Tensor::scalar(static_cast<Scalar>(p)), tau, omega).item());
        },
        py::arg("prediction"), py::arg("tau"), py::arg("omega"));

    m.def(
        "gradcheck_suite",
        [](int bits, std::uint64_t seed) {
            GradCheckSuiteOptions o;
            o.seed = seed;
            GradCheckSuiteReport r;
            {
                py::gil_scoped_release release;
                if (bits == 64) r = run_gradcheck_suite_64(o);
                else if (bits == 32) r = run_gradcheck_suite_32(o);
                else throw ArgumentError("bits must be 32 or 64");
            }
            return r.to_json().dump();
        },
        py::arg("bits") = 32, py::arg("seed") = 0);

    py::class_<HatModel>(m, "Model")
        .def(py::init([](const std::string& config_json) {
                 // keys not given keep their defaults
                 nlohmann::json j = HatConfig{}.to_json();
                 j.merge_patch(nlohmann::json::parse(config_json));
                 return HatModel(HatConfig::from_json(j));
             }),
             py::arg("config_json") = "{}")
        .def_static("load", [](const std::string& path) { return HatModel::load(path); }, py::arg("path"))
        .def("save", [](const HatModel& self, const std::string& path) { self.save(path); }, py::arg("path"))
        .def_property_readonly("config_json", [](const HatModel& self) { return self.config().to_json().dump(); })
        .def_property_readonly("parameter_count", &HatModel::parameter_count)
        .def("task_index", &HatModel::task_index, py::arg("task"))
        .def(
            "forward",
            [](const HatModel& self, const Array& image, const std::vector<std::pair<double, double>>& fixations,
               int task) {
                const TaskOutput out = self.forward(to_tensor(image), to_fixations(fixations), task);
                return py::make_tuple(to_array(out.heatmap), double(out.termination[0]), to_array(out.attention));
            },
            py::arg("image"), py::arg("fixations"), py::arg("task"),
            "Returns (heatmap [H, W], termination probability, cross-attention [heads, tokens]).")
        .def(
            "generate",
            [](const HatModel& self, const Array& image, int task, const std::string& mode, int max_len,
               double threshold, std::uint64_t seed) {
                GenerationPolicy pol;
                pol.mode = parse_generation_mode(mode);
                pol.max_len = max_len;
                pol.threshold = threshold;
                pol.seed = seed;
                const Tensor img = to_tensor(image);
                GeneratedScanpath path;
                {
                    py::gil_scoped_release release;
                    path = generate(self, img, task, pol);
                }
                py::dict d;
                d["fixations"] = from_fixations(path.fixations);
                d["termination_probs"] = path.termination_probs;
                d["terminated_by"] = to_string(path.terminated_by);
                return d;
            },
            py::arg("image"), py::arg("task"), py::arg("mode") = "greedy", py::arg("max_len") = 6,
            py::arg("threshold") = 0.5, py::arg("seed") = 0);
}
