#include "hat/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hat/errors.hpp"

namespace hat {

using nlohmann::json;

std::string to_string(Condition c) {
    switch (c) {
        case Condition::TP: return "TP";
        case Condition::TA: return "TA";
        case Condition::FV: return "FV";
    }
    return "?";
}

Condition parse_condition(std::string_view text) {
    if (text == "TP") return Condition::TP;
    if (text == "TA") return Condition::TA;
    if (text == "FV") return Condition::FV;
    throw ArgumentError("unknown condition '" + std::string(text) + "' (expected TP, TA or FV)");
}

void validate_image(const ImageRaster& image) {
    if (image.height < 32 || image.width < 32) {
        throw ValidationError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                              " is smaller than 32x32");
    }
    if (image.channels != 1 && image.channels != 3) {
        throw ValidationError("image has " + std::to_string(image.channels) + " channels (expected 1 or 3)");
    }
    if (image.values.size() != static_cast<std::size_t>(image.height) * image.width * image.channels) {
        throw ValidationError("image value count does not match its dimensions");
    }
    for (float v : image.values) {
        if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("image value outside [0, 1]");
    }
}

std::size_t DatasetManifest::image_index(const std::string& id) const {
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].id == id) return i;
    }
    throw ValidationError("unknown image id '" + id + "'");
}

int DatasetManifest::task_index(const std::string& task) const {
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (tasks[i] == task) return static_cast<int>(i);
    }
    throw ValidationError("unknown task '" + task + "'");
}

void validate_manifest(const DatasetManifest& m, bool check_files) {
    if (!(m.pixels_per_degree > 0)) throw ValidationError("manifest: pixels_per_degree must be positive");
    for (std::size_t i = 0; i < m.images.size(); ++i) {
        const auto& e = m.images[i];
        const std::string where = "image " + std::to_string(i) + " ('" + e.id + "')";
        if (e.id.empty()) throw ValidationError(where + ": field 'id' is empty");
        for (std::size_t j = 0; j < i; ++j) {
            if (m.images[j].id == e.id) throw ValidationError(where + ": duplicate field 'id'");
        }
        if (check_files) {
            const auto header = read_pnm_header(m.base_dir / e.raster);
            if (header.width != e.width || header.height != e.height) {
                throw ValidationError(where + ": field 'raster' is " + std::to_string(header.height) + "x" +
                                      std::to_string(header.width) + ", declared " + std::to_string(e.height) +
                                      "x" + std::to_string(e.width));
            }
            if (!e.labels.empty()) {
                const auto lh = read_pnm_header(m.base_dir / e.labels);
                if (lh.width != e.width || lh.height != e.height) {
                    throw ValidationError(where + ": field 'labels' size differs from the image");
                }
                const auto labels = read_label_map(m.base_dir / e.labels);
                for (int id : labels.labels) {
                    if (!m.label_names.count(id)) {
                        throw ValidationError(where + ": field 'labels' contains id " + std::to_string(id) +
                                              " missing from the label vocabulary");
                    }
                }
            }
        }
        if (e.height < 32 || e.width < 32) throw ValidationError(where + ": image smaller than 32x32");
    }
    for (std::size_t r = 0; r < m.records.size(); ++r) {
        const auto& rec = m.records[r];
        const std::string where = "record " + std::to_string(r);
        std::size_t img = 0;
        try {
            img = m.image_index(rec.image);
        } catch (const ValidationError&) {
            throw ValidationError(where + ": field 'image' refers to unknown image '" + rec.image + "'");
        }
        if (std::find(m.tasks.begin(), m.tasks.end(), rec.task) == m.tasks.end()) {
            throw ValidationError(where + ": field 'task' has unknown task '" + rec.task + "'");
        }
        if (rec.fixations.empty()) throw ValidationError(where + ": field 'X' needs at least one fixation");
        const auto& e = m.images[img];
        for (std::size_t i = 0; i < rec.fixations.size(); ++i) {
            const auto& f = rec.fixations[i];
            if (!(f.x >= 0 && f.x < e.width)) {
                throw ValidationError(where + ": field 'X' index " + std::to_string(i) + " value " +
                                      std::to_string(f.x) + " out of bounds [0, " + std::to_string(e.width) + ")");
            }
            if (!(f.y >= 0 && f.y < e.height)) {
                throw ValidationError(where + ": field 'Y' index " + std::to_string(i) + " value " +
                                      std::to_string(f.y) + " out of bounds [0, " + std::to_string(e.height) + ")");
            }
        }
        if (rec.termination_probs) {
            for (double t : *rec.termination_probs) {
                if (!(t >= 0 && t <= 1)) throw ValidationError(where + ": field 'tau' outside [0, 1]");
            }
        }
    }
}

namespace {

json object_to_json(const SceneObject& o) {
    return json{{"kind", o.kind}, {"x", o.x}, {"y", o.y}, {"radius", o.radius}, {"contrast", o.contrast}};
}

json record_to_json(const ScanpathRecord& r) {
    json X = json::array(), Y = json::array();
    for (const auto& f : r.fixations) {
        X.push_back(f.x);
        Y.push_back(f.y);
    }
    json j{{"image", r.image},   {"task", r.task}, {"subject", r.subject}, {"condition", to_string(r.condition)},
           {"X", std::move(X)}, {"Y", std::move(Y)}, {"terminated", r.terminated}};
    if (r.termination_probs) j["tau"] = *r.termination_probs;
    if (r.terminated_by) j["terminated_by"] = *r.terminated_by;
    return j;
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ValidationError(where + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(where + ": field '" + key + "' has the wrong type");
    }
}

ScanpathRecord record_from_json(const json& j, const std::string& where) {
    ScanpathRecord r;
    r.image = field<std::string>(j, "image", where);
    r.task = field<std::string>(j, "task", where);
    r.subject = j.contains("subject") ? field<std::string>(j, "subject", where) : std::string();
    try {
        r.condition = parse_condition(field<std::string>(j, "condition", where));
    } catch (const ArgumentError& e) {
        throw ValidationError(where + ": field 'condition': " + e.what());
    }
    const auto X = field<std::vector<double>>(j, "X", where);
    const auto Y = field<std::vector<double>>(j, "Y", where);
    if (X.size() != Y.size()) throw ValidationError(where + ": fields 'X' and 'Y' differ in length");
    for (std::size_t i = 0; i < X.size(); ++i) r.fixations.push_back({X[i], Y[i]});
    r.terminated = field<bool>(j, "terminated", where);
    if (j.contains("tau")) r.termination_probs = field<std::vector<double>>(j, "tau", where);
    if (j.contains("terminated_by")) r.terminated_by = field<std::string>(j, "terminated_by", where);
    return r;
}

}  // namespace

std::string serialize_record(const ScanpathRecord& record) { return record_to_json(record).dump(); }

DatasetManifest parse_manifest(std::istream& is, const std::filesystem::path& base_dir) {
    DatasetManifest m;
    m.base_dir = base_dir;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ValidationError("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
        }
        if (!have_header) {
            if (!j.contains("manifest")) throw ValidationError("line 1: missing 'manifest' header object");
            const auto& h = j.at("manifest");
            const std::string where = "manifest header";
            m.version = h.contains("version") ? field<int>(h, "version", where) : 1;
            if (h.contains("pixels_per_degree")) m.pixels_per_degree = field<double>(h, "pixels_per_degree", where);
            m.tasks = field<std::vector<std::string>>(h, "tasks", where);
            if (h.contains("labels")) {
                for (auto& [k, v] : h.at("labels").items()) m.label_names[std::stoi(k)] = v.get<std::string>();
            }
            if (h.contains("images")) {
                std::size_t i = 0;
                for (const auto& ij : h.at("images")) {
                    const std::string iw = "image " + std::to_string(i++);
                    ImageEntry e;
                    e.id = field<std::string>(ij, "id", iw);
                    e.raster = field<std::string>(ij, "raster", iw);
                    if (ij.contains("labels")) e.labels = field<std::string>(ij, "labels", iw);
                    e.height = field<int>(ij, "height", iw);
                    e.width = field<int>(ij, "width", iw);
                    if (ij.contains("objects")) {
                        for (const auto& oj : ij.at("objects")) {
                            e.objects.push_back({field<std::string>(oj, "kind", iw), field<double>(oj, "x", iw),
                                                 field<double>(oj, "y", iw), field<double>(oj, "radius", iw),
                                                 field<double>(oj, "contrast", iw)});
                        }
                    }
                    m.images.push_back(std::move(e));
                }
            }
            if (h.contains("generator")) m.generator = h.at("generator");
            have_header = true;
            continue;
        }
        m.records.push_back(record_from_json(j, "record " + std::to_string(m.records.size())));
    }
    if (!have_header) throw ValidationError("manifest is empty");
    return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest " + path.string());
    auto m = parse_manifest(is, path.parent_path());
    validate_manifest(m, true);
    return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    const fs::path new_base = path.parent_path();
    if (!new_base.empty()) fs::create_directories(new_base);
    auto rebase = [&](const std::string& p) -> std::string {
        if (p.empty()) return p;
        const fs::path from = fs::weakly_canonical(fs::absolute(m.base_dir / p));
        const fs::path to = fs::weakly_canonical(fs::absolute(new_base.empty() ? fs::path(".") : new_base));
        return from.lexically_relative(to).generic_string();
    };
    json header;
    header["version"] = m.version;
    header["pixels_per_degree"] = m.pixels_per_degree;
    header["tasks"] = m.tasks;
    json labels = json::object();
    for (const auto& [k, v] : m.label_names) labels[std::to_string(k)] = v;
    header["labels"] = labels;
    json images = json::array();
    for (const auto& e : m.images) {
        json ij{{"id", e.id}, {"raster", rebase(e.raster)}, {"height", e.height}, {"width", e.width}};
        if (!e.labels.empty()) ij["labels"] = rebase(e.labels);
        json objs = json::array();
        for (const auto& o : e.objects) objs.push_back(object_to_json(o));
        ij["objects"] = objs;
        images.push_back(std::move(ij));
    }
    header["images"] = images;
    header["generator"] = m.generator;

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << json{{"manifest", header}}.dump() << '\n';
    for (const auto& r : m.records) os << record_to_json(r).dump() << '\n';
    if (!os) throw IoError("failed writing " + path.string());
}

std::vector<Fixation> scale_fixations(std::span<const Fixation> fixations, int from_height, int from_width,
                                      int to_height, int to_width) {
    const double sy = static_cast<double>(to_height) / from_height;
    const double sx = static_cast<double>(to_width) / from_width;
    std::vector<Fixation> out;
    out.reserve(fixations.size());
    for (const auto& f : fixations) out.push_back({f.x * sx, f.y * sy});
    return out;
}

ResizedImage resize_to_canvas(const ImageRaster& image, std::span<const Fixation> fixations, int canvas_height,
                              int canvas_width) {
    validate_image(image);
    ResizedImage out;
    out.image = (image.height == canvas_height && image.width == canvas_width)
                    ? image
                    : resize_bilinear(image, canvas_height, canvas_width);
    out.fixations = scale_fixations(fixations, image.height, image.width, canvas_height, canvas_width);
    return out;
}

CanvasDataset load_canvas_dataset(const DatasetManifest& manifest, int canvas_height, int canvas_width) {
    CanvasDataset ds;
    ds.manifest = manifest;
    ds.height = canvas_height;
    ds.width = canvas_width;
    double ratio_sum = 0;
    for (const auto& e : manifest.images) {
        auto img = read_image(manifest.base_dir / e.raster);
        ds.images.push_back(resize_to_canvas(img, {}, canvas_height, canvas_width).image);
        if (!e.labels.empty()) {
            ds.labels.push_back(resize_nearest(read_label_map(manifest.base_dir / e.labels), canvas_height,
                                               canvas_width));
        } else {
            ds.labels.emplace_back();
        }
        ratio_sum += static_cast<double>(canvas_width) / e.width;
    }
    for (auto& r : ds.manifest.records) {
        const auto& e = manifest.images[manifest.image_index(r.image)];
        r.fixations = scale_fixations(r.fixations, e.height, e.width, canvas_height, canvas_width);
    }
    for (auto& e : ds.manifest.images) {
        const double sx = static_cast<double>(canvas_width) / e.width;
        const double sy = static_cast<double>(canvas_height) / e.height;
        for (auto& o : e.objects) {
            o.x *= sx;
            o.y *= sy;
            o.radius *= std::sqrt(sx * sy);
        }
        e.height = canvas_height;
        e.width = canvas_width;
    }
    // Per-image ratios agree whenever all images share a size.
    if (!manifest.images.empty()) ds.manifest.pixels_per_degree *= ratio_sum / manifest.images.size();
    return ds;
}

}  // namespace hat
