#include "hpm/detection.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "hpm/parallel.hpp"

namespace hpm {

std::vector<CachedLevel> prepare_levels(const Detector& d, const Image& image, const PyramidOptions& opt,
                                        int workers) {
    std::vector<CachedLevel> out;
    for (int ci = 0; ci < int(d.components.size()); ++ci) {
        const Model& m = d.components[ci];
        PyramidOptions po = opt;
        po.cell_size = m.spec.cell_size;
        FeaturePyramid pyr = build_pyramid(image, po, workers);
        auto [er, ec] = model_extent(m.spec);
        std::vector<CachedLevel> lv(pyr.levels.size());
        parallel_for(int(pyr.levels.size()), workers, [&](int i) {
            const auto& e = pyr.levels[i];
            lv[i].component = ci;
            lv[i].level = i;
            lv[i].frame = e.frame;
            if (e.features.rows >= er && e.features.cols >= ec) lv[i].unary = compute_unary_responses(m, e.features);
        });
        for (auto& l : lv)
            if (l.unary.rows > 0) out.push_back(std::move(l));
    }
    return out;
}

std::vector<Detection> nms(std::vector<Detection> cands, double thr) {
    std::vector<size_t> order(cands.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return cands[a].score > cands[b].score; });
    std::vector<Detection> kept;
    for (size_t i : order) {
        bool ok = true;
        for (const auto& k : kept)
            if (iou(k.box, cands[i].box) > thr) {
                ok = false;
                break;
            }
        if (ok) kept.push_back(std::move(cands[i]));
    }
    return kept;
}

Detection make_detection(const Model& m, const Configuration& c, double score, const LevelFrame& frame,
                         double box_pad) {
    const auto& spec = m.spec;
    Detection d;
    d.score = score;
    d.config = c;
    d.level = c.level;
    d.rotation = frame.degrees;
    d.mixture = spec.mixture;
    d.viewpoint = spec.states.view_of(c.parts[spec.topology.root].shape);
    d.landmarks.resize(c.landmarks.size());
    d.occluded.resize(c.landmarks.size());
    for (size_t k = 0; k < c.landmarks.size(); ++k) {
        const auto& n = c.landmarks[k];
        auto p = frame.cell_to_image(n.loc.x, n.loc.y);
        d.landmarks[k] = {p[0], p[1]};
        d.occluded[k] = spec.landmark_occluded(int(k), n.shape, n.occ);
    }
    d.box = landmark_box(d.landmarks, box_pad);
    return d;
}

namespace {

InferOptions infer_options(const DetectOptions& opt) {
    InferOptions io;
    io.skip_occluded_transforms = opt.skip_occluded_transforms;
    return io;
}

std::vector<size_t> ranked_cells(const MessageTables& t, double threshold) {
    std::vector<size_t> idx;
    const auto& s = t.root_scores();
    for (size_t l = 0; l < s.size(); ++l)
        if (t.root_channels()[l] >= 0 && s[l] >= threshold) idx.push_back(l);
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return s[a] > s[b]; });
    return idx;
}

Detection detection_at(const Detector& d, const CachedLevel& lv, const MessageTables& t, size_t l, double pad) {
    Configuration c = t.backtrack({int(l) / t.cols(), int(l) % t.cols()});
    c.level = lv.level;
    Detection det = make_detection(d.components[lv.component], c, t.root_scores()[l], lv.frame, pad);
    det.component = lv.component;
    return det;
}

}  // namespace

std::vector<Detection> detect_cached(const Detector& d, const std::vector<CachedLevel>& levels,
                                     const DetectOptions& opt) {
    std::vector<std::vector<Detection>> per(levels.size());
    const InferOptions io = infer_options(opt);
    parallel_for(int(levels.size()), opt.workers, [&](int i) {
        const auto& lv = levels[i];
        MessageTables t(d.components[lv.component], lv.unary, io);
        for (size_t l : ranked_cells(t, opt.threshold)) {
            if (int(per[i].size()) >= opt.max_per_level) break;
            Detection det = detection_at(d, lv, t, l, opt.box_pad);
            bool ok = true;
            for (const auto& k : per[i])
                if (iou(k.box, det.box) > opt.nms_iou) {
                    ok = false;
                    break;
                }
            if (ok) per[i].push_back(std::move(det));
        }
    });
    std::vector<Detection> all;
    for (auto& v : per)
        for (auto& x : v) all.push_back(std::move(x));
    return nms(std::move(all), opt.nms_iou);
}

std::vector<Detection> detect(const Detector& d, const Image& image, const DetectOptions& opt) {
    return detect_cached(d, prepare_levels(d, image, opt.pyramid, opt.workers), opt);
}

Detection localize_cached(const Detector& d, const std::vector<CachedLevel>& levels, const Box& box,
                          const DetectOptions& opt, double min_overlap, int landmarks) {
    std::vector<Detection> best(levels.size());
    std::vector<char> found(levels.size(), 0);
    const InferOptions io = infer_options(opt);
    parallel_for(int(levels.size()), opt.workers, [&](int i) {
        const auto& lv = levels[i];
        const Model& m = d.components[lv.component];
        if (landmarks > 0 && m.spec.topology.num_landmarks != landmarks) return;
        MessageTables t(m, lv.unary, io);
        for (size_t l : ranked_cells(t, kNegInfThreshold)) {
            Detection det = detection_at(d, lv, t, l, opt.box_pad);
            if (overlap_of(det.box, box) >= min_overlap) {
                best[i] = std::move(det);
                found[i] = 1;
                return;
            }
        }
    });
    int pick = -1;
    for (int i = 0; i < int(levels.size()); ++i)
        if (found[i] && (pick < 0 || best[i].score > best[pick].score)) pick = i;
    if (pick < 0) throw NotFoundError("no detection overlaps the given box enough");
    return best[pick];
}

Detection localize_in_box(const Detector& d, const Image& image, const Box& box, const DetectOptions& opt,
                          double min_overlap, int landmarks) {
    return localize_cached(d, prepare_levels(d, image, opt.pyramid, opt.workers), box, opt, min_overlap, landmarks);
}

nlohmann::json detection_to_json(const Detection& d) {
    nlohmann::json j;
    j["score"] = d.score;
    j["box"] = {d.box.x0, d.box.y0, d.box.x1, d.box.y1};
    j["landmarks"] = nlohmann::json::array();
    for (const auto& p : d.landmarks) j["landmarks"].push_back({p.x, p.y});
    j["occluded"] = d.occluded;
    j["viewpoint"] = d.viewpoint;
    j["rotation"] = d.rotation;
    j["mixture"] = d.mixture;
    return j;
}

Detection detection_from_json(const nlohmann::json& j) {
    Detection d;
    try {
        d.score = j.at("score").get<double>();
        const auto& b = j.at("box");
        d.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
        for (const auto& p : j.at("landmarks")) d.landmarks.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        d.occluded = j.at("occluded").get<std::vector<bool>>();
        d.viewpoint = j.at("viewpoint").get<int>();
        d.rotation = j.at("rotation").get<double>();
        d.mixture = j.at("mixture").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad detection record: ") + e.what());
    }
    if (d.occluded.size() != d.landmarks.size()) throw FormatError("bad detection record: occluded/landmarks size mismatch");
    return d;
}

std::string detections_to_jsonl(const std::vector<Detection>& ds) {
    std::string s;
    for (const auto& d : ds) s += detection_to_json(d).dump() + "\n";
    return s;
}

std::vector<Detection> detections_from_jsonl(const std::string& text) {
    std::vector<Detection> r;
    std::istringstream is(text);
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("line " + std::to_string(n) + ": " + e.what());
        }
        r.push_back(detection_from_json(j));
    }
    return r;
}

}  // namespace hpm
