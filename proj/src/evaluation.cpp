#include "hpm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "hpm/common.hpp"
#include "hpm/parallel.hpp"

namespace hpm {

std::vector<Point> LandmarkMap::apply(const std::vector<Point>& pred) const {
    if (int(pred.size()) != sources) throw DomainError("landmark map expects " + std::to_string(sources) + " points");
    Eigen::VectorXd x(2 * sources);
    for (int k = 0; k < sources; ++k) x[2 * k] = pred[k].x, x[2 * k + 1] = pred[k].y;
    Eigen::VectorXd y = beta.transpose() * x;
    std::vector<Point> r(targets);
    for (int p = 0; p < targets; ++p) r[p] = {y[2 * p], y[2 * p + 1]};
    return r;
}

LandmarkMap fit_landmark_map(const std::vector<std::vector<Point>>& preds, const std::vector<std::vector<Point>>& gts,
                             double lambda, const std::vector<int>& source_block,
                             const std::vector<int>& target_block) {
    if (preds.size() != gts.size() || preds.empty()) throw DomainError("landmark map needs matching, non-empty sets");
    if (lambda < 0) throw DomainError("ridge lambda must be >= 0");
    LandmarkMap m;
    m.sources = int(source_block.size());
    m.targets = int(target_block.size());
    m.lambda = lambda;
    for (size_t i = 0; i < preds.size(); ++i)
        if (int(preds[i].size()) != m.sources || int(gts[i].size()) != m.targets)
            throw DomainError("landmark map: example " + std::to_string(i) + " has the wrong number of points");
    m.beta = Eigen::MatrixXd::Zero(2 * m.sources, 2 * m.targets);
    m.allowed.assign(m.targets, std::vector<char>(m.sources, 0));
    const int n = int(preds.size());
    for (int p = 0; p < m.targets; ++p) {
        std::vector<int> src;
        for (int k = 0; k < m.sources; ++k)
            if (source_block[k] == target_block[p]) {
                src.push_back(k);
                m.allowed[p][k] = 1;
            }
        if (src.empty()) throw DomainError("landmark map: target " + std::to_string(p) + " has an empty block");
        const int d = 2 * int(src.size());
        Eigen::MatrixXd X(n, d);
        Eigen::MatrixXd Y(n, 2);
        for (int i = 0; i < n; ++i) {
            for (size_t j = 0; j < src.size(); ++j) {
                X(i, 2 * j) = preds[i][src[j]].x;
                X(i, 2 * j + 1) = preds[i][src[j]].y;
            }
            Y(i, 0) = gts[i][p].x;
            Y(i, 1) = gts[i][p].y;
        }
        Eigen::MatrixXd A = X.transpose() * X;
        if (lambda == 0) {
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
            qr.setThreshold(1e-10);
            if (qr.rank() < d)
                throw DomainError("landmark map: block of target " + std::to_string(p) +
                                  " is rank deficient; use lambda > 0");
        }
        A.diagonal().array() += lambda;
        Eigen::MatrixXd B = A.ldlt().solve(X.transpose() * Y);
        for (size_t j = 0; j < src.size(); ++j)
            for (int c = 0; c < 2; ++c) {
                m.beta(2 * src[j], 2 * p + c) = B(2 * j, c);
                m.beta(2 * src[j] + 1, 2 * p + c) = B(2 * j + 1, c);
            }
    }
    return m;
}

std::vector<int> occlusion_correspondence(const std::vector<Point>& source_mean,
                                          const std::vector<Point>& target_mean) {
    if (source_mean.empty()) throw DomainError("occlusion correspondence needs source points");
    std::vector<int> r(target_mean.size());
    for (size_t p = 0; p < target_mean.size(); ++p) {
        double best = INFINITY;
        for (size_t k = 0; k < source_mean.size(); ++k) {
            const double d = std::hypot(source_mean[k].x - target_mean[p].x, source_mean[k].y - target_mean[p].y);
            if (d < best) best = d, r[p] = int(k);
        }
    }
    return r;
}

std::vector<bool> transfer_occlusion(const std::vector<bool>& flags, const std::vector<int>& corr) {
    std::vector<bool> r(corr.size());
    for (size_t p = 0; p < corr.size(); ++p) {
        if (corr[p] < 0 || corr[p] >= int(flags.size())) throw DomainError("occlusion correspondence out of range");
        r[p] = flags[corr[p]];
    }
    return r;
}

EyeIndices EyeIndices::face68() { return {{36, 37, 38, 39, 40, 41}, {42, 43, 44, 45, 46, 47}}; }

double eye_distance(const std::vector<Point>& pts, const EyeIndices& eyes) {
    auto mean = [&](const std::vector<int>& idx) {
        double x = 0, y = 0;
        for (int i : idx) {
            if (i < 0 || i >= int(pts.size())) throw DomainError("eye index out of range");
            x += pts[i].x, y += pts[i].y;
        }
        return Point{x / idx.size(), y / idx.size()};
    };
    if (eyes.left.empty() || eyes.right.empty()) throw ConfigError("eye indices are empty");
    Point a = mean(eyes.left), b = mean(eyes.right);
    return std::hypot(a.x - b.x, a.y - b.y);
}

std::vector<double> ced_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 60; ++i) g.push_back(i * 0.005);
    return g;
}

LocalizationReport localization_metrics(const std::vector<std::vector<Point>>& preds,
                                        const std::vector<std::vector<Point>>& gts, const EyeIndices& eyes,
                                        double threshold, const std::vector<bool>& found) {
    if (preds.size() != gts.size()) throw DomainError("prediction and ground-truth counts differ");
    if (!found.empty() && found.size() != gts.size()) throw DomainError("found flags do not match the image count");
    LocalizationReport r;
    r.threshold = threshold;
    for (size_t i = 0; i < gts.size(); ++i) {
        if (!found.empty() && !found[i]) {
            ++r.missing;
            continue;
        }
        if (preds[i].size() != gts[i].size())
            throw DomainError("image " + std::to_string(i) + ": landmark counts differ");
        const double ipd = eye_distance(gts[i], eyes);
        if (!(ipd > 0)) throw DataError("image " + std::to_string(i) + ": zero interocular distance");
        double s = 0;
        for (size_t k = 0; k < gts[i].size(); ++k)
            s += std::hypot(preds[i][k].x - gts[i][k].x, preds[i][k].y - gts[i][k].y);
        r.errors.push_back(s / gts[i].size() / ipd);
    }
    const double total = double(gts.size());
    if (!r.errors.empty())
        r.mean_error = std::accumulate(r.errors.begin(), r.errors.end(), 0.0) / r.errors.size();
    auto frac = [&](double t) {
        if (total == 0) return 0.0;
        long c = 0;
        for (double e : r.errors) c += e <= t;
        return c / total;
    };
    r.success_rate = frac(threshold);
    for (double t : ced_grid()) r.ced.emplace_back(t, frac(t));
    return r;
}

OcclusionPR occlusion_pr(const std::vector<bool>& pred, const std::vector<bool>& gt) {
    return occlusion_pr(std::vector<std::vector<bool>>{pred}, std::vector<std::vector<bool>>{gt});
}

OcclusionPR occlusion_pr(const std::vector<std::vector<bool>>& pred, const std::vector<std::vector<bool>>& gt) {
    if (pred.size() != gt.size()) throw DomainError("prediction and ground-truth counts differ");
    OcclusionPR r;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i].size() != gt[i].size()) throw DomainError("occlusion flag counts differ");
        for (size_t k = 0; k < pred[i].size(); ++k) {
            const bool p = pred[i][k], g = gt[i][k];
            r.tp += p && g;
            r.fp += p && !g;
            r.fn += !p && g;
            r.tn += !p && !g;
        }
    }
    r.precision = r.tp + r.fp == 0 ? 1.0 : double(r.tp) / double(r.tp + r.fp);
    r.recall = r.tp + r.fn == 0 ? 0.0 : double(r.tp) / double(r.tp + r.fn);
    r.f1 = r.precision + r.recall == 0 ? 0.0 : 2 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

Model perturb_occlusion_biases(const Model& m, double alpha) {
    Model r = m;
    if (alpha == 0) return r;
    const auto& spec = m.spec;
    const int SV = spec.states.shape_states(), O = spec.states.occlusions;
    for (int k = 0; k < spec.topology.num_landmarks; ++k)
        for (int s = 0; s < SV; ++s)
            for (int o = 0; o < O; ++o) {
                if (!spec.landmark_occluded(k, s, o)) continue;
                double& b = r.w[m.layout.landmark_bias(k, s, o)];
                if (!is_neg_inf(b)) b += std::fabs(b) * alpha;
            }
    return r;
}

Detector perturb_occlusion_biases(const Detector& d, double alpha) {
    Detector r;
    for (const auto& m : d.components) r.components.push_back(perturb_occlusion_biases(m, alpha));
    return r;
}

std::vector<EvalFace> eval_faces(const DatasetManifest& m, double box_pad) {
    std::vector<EvalFace> r;
    for (const auto& f : m.faces) {
        EvalFace e;
        e.image = f.image;
        e.landmarks = f.landmarks;
        e.occluded = f.occluded.empty() ? std::vector<bool>(f.landmarks.size(), false) : f.occluded;
        e.box = f.box ? *f.box : landmark_box(f.landmarks, box_pad);
        r.push_back(std::move(e));
    }
    return r;
}

std::vector<SweepPoint> occlusion_sweep(const Detector& d, const std::vector<EvalFace>& faces,
                                        const std::vector<double>& alphas, const DetectOptions& opt,
                                        const EyeIndices& eyes, double min_overlap, double success_threshold) {
    std::vector<Detector> models;
    for (double a : alphas) models.push_back(perturb_occlusion_biases(d, a));
    const int n = int(faces.size());
    const int nl = d.components.empty() ? 0 : d.components[0].spec.topology.num_landmarks;
    std::vector<SweepPoint> pts(alphas.size());
    for (size_t a = 0; a < alphas.size(); ++a) {
        pts[a].alpha = alphas[a];
        pts[a].detections.resize(n);
        pts[a].found.assign(n, false);
    }
    DetectOptions inner = opt;
    inner.workers = 1;
    parallel_for(n, opt.workers, [&](int i) {
        Image img;
        try {
            img = load_image(faces[i].image);
        } catch (const std::exception& e) {
            throw DataError("cannot read " + faces[i].image + ": " + e.what());
        }
        auto levels = prepare_levels(d, img, inner.pyramid, 1);
        for (size_t a = 0; a < alphas.size(); ++a) {
            try {
                pts[a].detections[i] = localize_cached(models[a], levels, faces[i].box, inner, min_overlap, nl);
                pts[a].found[i] = true;
            } catch (const NotFoundError&) {
            }
        }
    });
    for (auto& p : pts) {
        std::vector<std::vector<Point>> preds(n), gts(n);
        std::vector<std::vector<bool>> po, go;
        for (int i = 0; i < n; ++i) {
            gts[i] = faces[i].landmarks;
            if (!p.found[i]) continue;
            preds[i] = p.detections[i].landmarks;
            po.push_back(p.detections[i].occluded);
            go.push_back(faces[i].occluded);
        }
        p.localization = localization_metrics(preds, gts, eyes, success_threshold, p.found);
        p.pr = occlusion_pr(po, go);
    }
    return pts;
}

double average_precision(const std::vector<PRPoint>& curve, long positives) {
    if (positives <= 0 || curve.empty()) return 0.0;
    double ap = 0, prev_r = 0;
    for (size_t i = 0; i < curve.size(); ++i) {
        double p = 0;
        for (size_t j = i; j < curve.size(); ++j) p = std::max(p, curve[j].precision);
        ap += (curve[i].recall - prev_r) * p;
        prev_r = curve[i].recall;
    }
    return ap;
}

DetectionPR detection_pr(const std::vector<std::vector<Detection>>& dets,
                         const std::vector<std::vector<GroundTruthBox>>& gts, double iou_min) {
    if (dets.size() != gts.size()) throw DomainError("detection and ground-truth image counts differ");
    DetectionPR r;
    struct Ref {
        double score;
        size_t img, idx;
    };
    std::vector<Ref> order;
    for (size_t i = 0; i < dets.size(); ++i) {
        for (size_t j = 0; j < dets[i].size(); ++j) order.push_back({dets[i][j].score, i, j});
        for (const auto& g : gts[i]) {
            ++r.positives;
            r.occluded_positives += g.occluded;
        }
    }
    std::stable_sort(order.begin(), order.end(), [](const Ref& a, const Ref& b) { return a.score > b.score; });
    std::vector<std::vector<char>> used(gts.size());
    for (size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].size(), 0);
    long tp = 0, fp = 0, tpo = 0;
    for (size_t k = 0; k < order.size(); ++k) {
        const auto& o = order[k];
        const Box& b = dets[o.img][o.idx].box;
        int best = -1;
        double best_iou = iou_min;
        for (size_t g = 0; g < gts[o.img].size(); ++g) {
            if (used[o.img][g]) continue;
            const double v = iou(b, gts[o.img][g].box);
            if (v >= best_iou && (best < 0 || v > best_iou)) best = int(g), best_iou = v;
        }
        if (best >= 0) {
            used[o.img][best] = 1;
            ++tp;
            tpo += gts[o.img][best].occluded;
        } else {
            ++fp;
        }
        if (k + 1 < order.size() && order[k + 1].score == o.score) continue;
        PRPoint p;
        p.threshold = o.score;
        p.tp = tp;
        p.fp = fp;
        p.precision = double(tp) / double(tp + fp);
        p.recall = r.positives ? double(tp) / double(r.positives) : 0.0;
        r.all.push_back(p);
        PRPoint q;
        q.threshold = o.score;
        q.tp = tpo;
        q.fp = fp;
        q.precision = tpo + fp == 0 ? 1.0 : double(tpo) / double(tpo + fp);
        q.recall = r.occluded_positives ? double(tpo) / double(r.occluded_positives) : 0.0;
        r.occluded.push_back(q);
    }
    r.ap = average_precision(r.all, r.positives);
    r.ap_occluded = average_precision(r.occluded, r.occluded_positives);
    return r;
}

namespace {

std::string xml_escape(const std::string& s) {
    std::string r;
    for (char c : s) {
        switch (c) {
            case '<': r += "&lt;"; break;
            case '>': r += "&gt;"; break;
            case '&': r += "&amp;"; break;
            case '"': r += "&quot;"; break;
            default: r += c;
        }
    }
    return r;
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

}  // namespace

std::string svg_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                     const std::vector<Series>& series, double xmax, double ymax) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    const double W = 480, H = 360, L = 60, R = 20, T = 40, B = 50;
    const double pw = W - L - R, ph = H - T - B;
    auto sx = [&](double x) { return L + pw * std::clamp(x / xmax, 0.0, 1.0); };
    auto sy = [&](double y) { return T + ph * (1 - std::clamp(y / ymax, 0.0, 1.0)); };
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
       << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title)
       << "</text>\n";
    os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double fx = xmax * i / 5, fy = ymax * i / 5;
        os << "<text x=\"" << sx(fx) << "\" y=\"" << T + ph + 16 << "\" text-anchor=\"middle\">" << num(fx)
           << "</text>\n";
        os << "<text x=\"" << L - 6 << "\" y=\"" << sy(fy) + 4 << "\" text-anchor=\"end\">" << num(fy) << "</text>\n";
        os << "<line x1=\"" << L << "\" y1=\"" << sy(fy) << "\" x2=\"" << L + pw << "\" y2=\"" << sy(fy)
           << "\" stroke=\"#ddd\"/>\n";
    }
    os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xml_escape(xlabel)
       << "</text>\n";
    os << "<text x=\"16\" y=\"" << T + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << T + ph / 2
       << ")\">" << xml_escape(ylabel) << "</text>\n";
    for (size_t s = 0; s < series.size(); ++s) {
        const char* c = colors[s % 6];
        os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : series[s].points) os << num(sx(x)) << ',' << num(sy(y)) << ' ';
        os << "\"/>\n";
        const double ly = T + 14 + 16 * double(s);
        os << "<line x1=\"" << L + pw - 120 << "\" y1=\"" << ly << "\" x2=\"" << L + pw - 100 << "\" y2=\"" << ly
           << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << L + pw - 95 << "\" y=\"" << ly + 4 << "\">" << xml_escape(series[s].name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string csv_table(const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows) {
    std::ostringstream os;
    os.precision(10);
    for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << '\n';
    for (const auto& r : rows) {
        for (size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
        os << '\n';
    }
    return os.str();
}

Image render_overlay(const Image& image, const Detection& d) {
    Image out(image.width, image.height, 3);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = image.at(x, y, image.channels == 3 ? c : 0);
    auto put = [&](int x, int y, float r, float g, float b) {
        if (x < 0 || y < 0 || x >= out.width || y >= out.height) return;
        out.at(x, y, 0) = r, out.at(x, y, 1) = g, out.at(x, y, 2) = b;
    };
    const int x0 = int(std::lround(d.box.x0)), x1 = int(std::lround(d.box.x1));
    const int y0 = int(std::lround(d.box.y0)), y1 = int(std::lround(d.box.y1));
    if (d.box.area() > 0) {
        for (int x = x0; x <= x1; ++x) put(x, y0, 1, 1, 1), put(x, y1, 1, 1, 1);
        for (int y = y0; y <= y1; ++y) put(x0, y, 1, 1, 1), put(x1, y, 1, 1, 1);
    }
    for (size_t k = 0; k < d.landmarks.size(); ++k) {
        const bool occ = k < d.occluded.size() && d.occluded[k];
        const int cx = int(std::lround(d.landmarks[k].x)), cy = int(std::lround(d.landmarks[k].y));
        for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx)
                if (dx * dx + dy * dy <= 4) put(cx + dx, cy + dy, occ ? 1.f : 0.f, occ ? 0.f : 1.f, 0.f);
    }
    return out;
}

}  // namespace hpm
