#include "hat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hat/errors.hpp"

namespace hat {

namespace {

double sq_dist(const Fixation& a, const Fixation& b) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return dx * dx + dy * dy;
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0 : s / static_cast<double>(v.size());
}

}  // namespace

// --- clustering ----------------------------------------------------------------

int ClusterAssignment::assign(const Fixation& f) const {
    if (centers.empty()) throw ArgumentError("ClusterAssignment: no centres");
    int best = 0;
    double best_d = sq_dist(f, centers[0]);
    for (std::size_t c = 1; c < centers.size(); ++c) {
        const double d = sq_dist(f, centers[c]);
        if (d < best_d) best_d = d, best = static_cast<int>(c);
    }
    return best;
}

std::vector<int> ClusterAssignment::assign(std::span<const Fixation> fixations) const {
    std::vector<int> out;
    out.reserve(fixations.size());
    for (const auto& f : fixations) out.push_back(assign(f));
    return out;
}

ClusterAssignment cluster_fixations(std::span<const Fixation> points, double bandwidth_px,
                                    const MeanShiftOptions& options) {
    if (points.empty()) throw ArgumentError("cluster_fixations: need at least one fixation");
    if (!(bandwidth_px > 0)) throw ArgumentError("cluster_fixations: bandwidth must be positive");
    const double bw2 = bandwidth_px * bandwidth_px;
    const double merge2 = 0.25 * bw2;
    const double tol2 = std::pow(options.tolerance * bandwidth_px, 2);

    ClusterAssignment out;
    out.bandwidth_px = bandwidth_px;
    for (const auto& start : points) {
        Fixation mode = start;
        for (int it = 0; it < options.max_iterations; ++it) {
            double sx = 0, sy = 0;
            std::size_t n = 0;
            for (const auto& p : points) {
                if (sq_dist(p, mode) <= bw2) sx += p.x, sy += p.y, ++n;
            }
            if (n == 0) break;
            const Fixation next{sx / static_cast<double>(n), sy / static_cast<double>(n)};
            const bool settled = sq_dist(next, mode) < tol2;
            mode = next;
            if (settled) break;
        }
        bool merged = false;
        for (const auto& c : out.centers) {
            if (sq_dist(c, mode) <= merge2) {
                merged = true;
                break;
            }
        }
        if (!merged) out.centers.push_back(mode);
    }
    out.ids = out.assign(points);
    return out;
}

// --- alignment -------------------------------------------------------------------

nlohmann::json AlignmentParams::to_json() const {
    return {{"match_reward", match_reward}, {"mismatch_penalty", mismatch_penalty}, {"gap_penalty", gap_penalty}};
}

AlignmentScore nw_align(std::span<const int> a, std::span<const int> b, const AlignmentParams& params) {
    if (a.empty() || b.empty()) return {0, true};
    const std::size_t n = a.size(), m = b.size();
    std::vector<double> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = -params.gap_penalty * static_cast<double>(j);
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = -params.gap_penalty * static_cast<double>(i);
        for (std::size_t j = 1; j <= m; ++j) {
            const double diag = prev[j - 1] + (a[i - 1] == b[j - 1] ? params.match_reward : -params.mismatch_penalty);
            cur[j] = std::max({diag, prev[j] - params.gap_penalty, cur[j - 1] - params.gap_penalty});
        }
        std::swap(prev, cur);
    }
    return {prev[m], false};
}

FlaggedValue normalized_alignment(std::span<const int> a, std::span<const int> b, const AlignmentParams& params) {
    const AlignmentScore s = nw_align(a, b, params);
    if (s.empty) return {0, true};
    return {s.score / static_cast<double>(std::max(a.size(), b.size())), false};
}

FlaggedValue sequence_score(std::span<const Fixation> pred, std::span<const Fixation> gt,
                            const ClusterAssignment& clustering, const AlignmentParams& params) {
    const auto a = clustering.assign(pred);
    const auto b = clustering.assign(gt);
    return normalized_alignment(a, b, params);
}

int label_at(const SemanticLabelMap& labels, const Fixation& f) {
    return labels.labels[pixel_index(f, labels.height, labels.width)];
}

std::optional<FlaggedValue> semantic_sequence_score(std::span<const Fixation> pred, std::span<const Fixation> gt,
                                                    const SemanticLabelMap* labels,
                                                    const AlignmentParams& params) {
    if (labels == nullptr) return std::nullopt;
    std::vector<int> a, b;
    for (const auto& f : pred) a.push_back(label_at(*labels, f));
    for (const auto& f : gt) b.push_back(label_at(*labels, f));
    return normalized_alignment(a, b, params);
}

// --- saliency ----------------------------------------------------------------------

std::size_t pixel_index(const Fixation& f, int height, int width) {
    const long row = std::clamp(std::lround(f.y), 0L, static_cast<long>(height) - 1);
    const long col = std::clamp(std::lround(f.x), 0L, static_cast<long>(width) - 1);
    return static_cast<std::size_t>(row) * width + static_cast<std::size_t>(col);
}

static void check_map(std::span<const double> map, int height, int width, const char* what) {
    if (height <= 0 || width <= 0 || map.size() != static_cast<std::size_t>(height) * width) {
        throw ArgumentError(std::string(what) + ": map must be height*width long");
    }
}

FlaggedValue nss(std::span<const double> map, int height, int width, const Fixation& fixation) {
    check_map(map, height, width, "nss");
    const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
    if (*lo == *hi) return {0, true};
    const double n = static_cast<double>(map.size());
    double mean = 0;
    for (double v : map) mean += v;
    mean /= n;
    double var = 0;
    for (double v : map) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    if (!(sd > 0)) return {0, true};
    return {(map[pixel_index(fixation, height, width)] - mean) / sd, false};
}

double auc_judd(std::span<const double> map, int height, int width, std::span<const Fixation> positives) {
    check_map(map, height, width, "auc_judd");
    if (positives.empty()) throw ArgumentError("auc_judd: need at least one positive");
    std::vector<char> is_positive(map.size(), 0);
    std::vector<double> pos;
    for (const auto& f : positives) {
        const std::size_t i = pixel_index(f, height, width);
        is_positive[i] = 1;
        pos.push_back(map[i]);
    }
    std::vector<double> neg;
    neg.reserve(map.size());
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (!is_positive[i]) neg.push_back(map[i]);
    }
    if (neg.empty()) return 0.5;
    std::sort(neg.begin(), neg.end());
    double wins = 0;
    for (double v : pos) {
        const auto lo = std::lower_bound(neg.begin(), neg.end(), v);
        const auto hi = std::upper_bound(lo, neg.end(), v);
        wins += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
    }
    return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

double info_gain(std::span<const double> map, std::span<const double> baseline, int height, int width,
                 const Fixation& fixation, double eps) {
    check_map(map, height, width, "info_gain");
    check_map(baseline, height, width, "info_gain");
    double sp = 0, sq = 0;
    for (double v : map) sp += v;
    for (double v : baseline) sq += v;
    if (!(sp > 0) || !(sq > 0)) throw ArgumentError("info_gain: maps must have positive mass");
    const std::size_t i = pixel_index(fixation, height, width);
    return std::log2(eps + map[i] / sp) - std::log2(eps + baseline[i] / sq);
}

std::vector<double> gaussian_bump(const Fixation& f, int height, int width, double sigma_px) {
    if (!(sigma_px > 0)) throw ArgumentError("gaussian_bump: sigma must be positive");
    const std::size_t centre = pixel_index(f, height, width);
    const int cy = static_cast<int>(centre / width), cx = static_cast<int>(centre % width);
    std::vector<double> gx(width), gy(height);
    const double k = 1.0 / (2.0 * sigma_px * sigma_px);
    for (int x = 0; x < width; ++x) gx[x] = std::exp(-k * (x - cx) * (x - cx));
    for (int y = 0; y < height; ++y) gy[y] = std::exp(-k * (y - cy) * (y - cy));
    std::vector<double> out(static_cast<std::size_t>(height) * width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) out[static_cast<std::size_t>(y) * width + x] = gy[y] * gx[x];
    }
    return out;
}

std::map<std::string, std::vector<double>> build_baseline_density(std::span<const ScanpathRecord> records,
                                                                  std::span<const std::string> tasks, int height,
                                                                  int width, double sigma_px) {
    const std::size_t n = static_cast<std::size_t>(height) * width;
    std::map<std::string, std::vector<double>> out;
    std::map<std::string, std::size_t> counts;
    for (const auto& t : tasks) out[t].assign(n, 0.0);
    for (const auto& r : records) {
        auto it = out.find(r.task);
        if (it == out.end()) continue;
        for (std::size_t i = 1; i < r.fixations.size(); ++i) {
            const auto bump = gaussian_bump(r.fixations[i], height, width, sigma_px);
            for (std::size_t p = 0; p < n; ++p) it->second[p] += bump[p];
            ++counts[r.task];
        }
    }
    for (auto& [task, map] : out) {
        double total = 0;
        for (double v : map) total += v;
        if (counts[task] == 0 || !(total > 0)) {
            std::fill(map.begin(), map.end(), 1.0 / static_cast<double>(n));
        } else {
            for (double& v : map) v /= total;
        }
    }
    return out;
}

ConditionalResult conditional_eval(std::span<const ScanpathRecord> records, int height, int width,
                                   const NextFixationPredictor& predictor,
                                   const std::map<std::string, std::vector<double>>& baseline) {
    ConditionalResult out;
    std::vector<double> igs, nsss, aucs;
    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto& rec = records[r];
        const auto base = baseline.find(rec.task);
        if (base == baseline.end()) throw ArgumentError("conditional_eval: no baseline for task '" + rec.task + "'");
        for (std::size_t i = 1; i < rec.fixations.size(); ++i) {
            const std::vector<double> map = predictor(rec, i);
            const Fixation& target = rec.fixations[i];
            ConditionalStep s;
            s.record = r;
            s.step = i;
            s.ig = info_gain(map, base->second, height, width, target);
            const FlaggedValue n = nss(map, height, width, target);
            s.nss = n.value;
            s.nss_flagged = n.flagged;
            s.auc = auc_judd(map, height, width, std::span<const Fixation>(&target, 1));
            igs.push_back(s.ig);
            nsss.push_back(s.nss);
            aucs.push_back(s.auc);
            out.per_step.push_back(s);
        }
    }
    out.steps = out.per_step.size();
    out.cig = mean_of(igs);
    out.cnss = mean_of(nsss);
    out.cauc = mean_of(aucs);
    return out;
}

// --- set-level ---------------------------------------------------------------------

RecallResult scanpath_recall(std::span<const ScanpathGroup> groups, double threshold, const AlignmentParams& params) {
    RecallResult out;
    std::vector<double> per_group;
    for (const auto& g : groups) {
        if (g.predictions.empty() || g.ground_truth.empty()) continue;
        std::size_t covered = 0;
        for (const auto& gt : g.ground_truth) {
            double best = -std::numeric_limits<double>::infinity();
            for (const auto& pred : g.predictions) best = std::max(best, sequence_score(pred, gt, g.clustering, params).value);
            if (best > threshold) ++covered;
        }
        per_group.push_back(static_cast<double>(covered) / static_cast<double>(g.ground_truth.size()));
    }
    out.groups = per_group.size();
    out.recall = mean_of(per_group);
    return out;
}

ConsistencyResult human_consistency(std::span<const ScanpathGroup> groups, const AlignmentParams& params) {
    ConsistencyResult out;
    std::vector<double> per_group;
    for (const auto& g : groups) {
        const std::size_t n = g.ground_truth.size();
        if (n < 2) {
            ++out.skipped;
            continue;
        }
        double total = 0;
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                total += sequence_score(g.ground_truth[i], g.ground_truth[j], g.clustering, params).value;
                ++pairs;
            }
        }
        per_group.push_back(total / static_cast<double>(pairs));
    }
    out.groups = per_group.size();
    out.value = mean_of(per_group);
    return out;
}

std::vector<ScanpathGroup> group_scanpaths(const CanvasDataset& ground_truth,
                                           std::span<const ScanpathRecord> predictions, double bandwidth_px) {
    std::vector<ScanpathGroup> groups;
    std::map<std::pair<std::string, std::string>, std::size_t> index;
    for (const auto& r : ground_truth.manifest.records) {
        const auto key = std::make_pair(r.image, r.task);
        auto it = index.find(key);
        if (it == index.end()) {
            it = index.emplace(key, groups.size()).first;
            ScanpathGroup g;
            g.image = r.image;
            g.task = r.task;
            const std::size_t img = ground_truth.manifest.image_index(r.image);
            if (img < ground_truth.labels.size() && ground_truth.labels[img]) g.labels = &*ground_truth.labels[img];
            groups.push_back(std::move(g));
        }
        groups[it->second].ground_truth.push_back(r.fixations);
    }
    for (const auto& p : predictions) {
        const auto it = index.find({p.image, p.task});
        if (it != index.end()) groups[it->second].predictions.push_back(p.fixations);
    }
    for (auto& g : groups) {
        std::vector<Fixation> all;
        for (const auto& s : g.ground_truth) all.insert(all.end(), s.begin(), s.end());
        g.clustering = cluster_fixations(all, bandwidth_px);
    }
    return groups;
}

nlohmann::json MetricParams::to_json() const {
    return {{"alignment", alignment.to_json()},
            {"normalizer", "max_length"},
            {"bandwidth_px", bandwidth_px},
            {"sigma_px", sigma_px},
            {"recall_threshold", recall_threshold},
            {"ig_epsilon", ig_epsilon},
            {"ig_log_base", 2},
            {"auc_variant", "judd: fixation pixels positive, all other pixels negative, ties 1/2"}};
}

MetricReport evaluate_scanpaths(std::span<const ScanpathGroup> groups, const MetricParams& params) {
    MetricReport report;
    report.params = params;
    std::vector<double> ss_all, semss_all;
    for (const auto& g : groups) {
        GroupScores s;
        s.image = g.image;
        s.task = g.task;
        s.ground_truth = g.ground_truth.size();
        s.predictions = g.predictions.size();
        if (!g.predictions.empty()) {
            std::vector<double> ss, semss;
            for (const auto& pred : g.predictions) {
                for (const auto& gt : g.ground_truth) {
                    ss.push_back(sequence_score(pred, gt, g.clustering, params.alignment).value);
                    if (auto v = semantic_sequence_score(pred, gt, g.labels, params.alignment)) {
                        semss.push_back(v->value);
                    }
                }
            }
            s.ss = mean_of(ss);
            ss_all.push_back(*s.ss);
            if (!semss.empty()) {
                s.semss = mean_of(semss);
                semss_all.push_back(*s.semss);
            }
        }
        report.groups.push_back(std::move(s));
    }
    if (!ss_all.empty()) {
        report.ss = mean_of(ss_all);
        report.recall = scanpath_recall(groups, params.recall_threshold, params.alignment);
    }
    if (!semss_all.empty()) report.semss = mean_of(semss_all);
    report.consistency = human_consistency(groups, params.alignment);
    return report;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string csv_cell(const std::optional<double>& v) {
    if (!v) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

}  // namespace

nlohmann::json MetricReport::to_json() const {
    nlohmann::json j;
    j["params"] = params.to_json();
    j["SS"] = opt(ss);
    j["SemSS"] = opt(semss);
    if (conditional) {
        j["cIG"] = conditional->cig;
        j["cNSS"] = conditional->cnss;
        j["cAUC"] = conditional->cauc;
        j["conditional_steps"] = conditional->steps;
    } else {
        j["cIG"] = j["cNSS"] = j["cAUC"] = nullptr;
    }
    if (recall) {
        j["recall"] = recall->recall;
        j["recall_groups"] = recall->groups;
    } else {
        j["recall"] = nullptr;
    }
    if (consistency) {
        j["human_consistency"] = consistency->groups > 0 ? nlohmann::json(consistency->value) : nlohmann::json(nullptr);
        j["human_consistency_groups"] = consistency->groups;
        j["human_consistency_skipped"] = consistency->skipped;
    }
    auto& arr = j["groups"] = nlohmann::json::array();
    for (const auto& g : groups) {
        arr.push_back({{"image", g.image},
                       {"task", g.task},
                       {"ground_truth", g.ground_truth},
                       {"predictions", g.predictions},
                       {"SS", opt(g.ss)},
                       {"SemSS", opt(g.semss)}});
    }
    return j;
}

std::string MetricReport::to_csv() const {
    std::optional<double> cig, cnss, cauc, rec, hc;
    if (conditional) cig = conditional->cig, cnss = conditional->cnss, cauc = conditional->cauc;
    if (recall) rec = recall->recall;
    if (consistency && consistency->groups > 0) hc = consistency->value;
    std::string out = "SemSS,SS,cIG,cNSS,cAUC,recall,HC\n";
    out += csv_cell(semss) + "," + csv_cell(ss) + "," + csv_cell(cig) + "," + csv_cell(cnss) + "," + csv_cell(cauc) +
           "," + csv_cell(rec) + "," + csv_cell(hc) + "\n";
    return out;
}

}  // namespace hat
