#include "hpm/supervision.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "hpm/model.hpp"
#include "hpm/parallel.hpp"
#include "hpm/synthetic.hpp"

namespace hpm {

ProcrustesResult procrustes_align(const std::vector<Point>& a, const std::vector<Point>& b) {
    const size_t n = a.size();
    if (n < 2 || b.size() != n) throw DomainError("procrustes_align: need two shapes with equal counts >= 2");
    double ax = 0, ay = 0, bx = 0, by = 0;
    for (size_t i = 0; i < n; ++i) ax += a[i].x, ay += a[i].y, bx += b[i].x, by += b[i].y;
    ax /= n, ay /= n, bx /= n, by /= n;
    double den = 0, sb = 0, num_a = 0, num_b = 0;
    for (size_t i = 0; i < n; ++i) {
        const double px = a[i].x - ax, py = a[i].y - ay, qx = b[i].x - bx, qy = b[i].y - by;
        den += px * px + py * py;
        sb += qx * qx + qy * qy;
        num_a += px * qx + py * qy;
        num_b += px * qy - py * qx;
    }
    if (!(den > 1e-18) || !(sb > 1e-18) || !std::isfinite(den) || !std::isfinite(sb))
        throw DomainError("procrustes_align: degenerate shape");
    ProcrustesResult r;
    r.transform.a = num_a / den;
    r.transform.b = num_b / den;
    r.transform.tx = bx - (r.transform.a * ax - r.transform.b * ay);
    r.transform.ty = by - (r.transform.b * ax + r.transform.a * ay);
    double ss = 0;
    for (size_t i = 0; i < n; ++i) {
        auto p = r.transform.apply(a[i].x, a[i].y);
        ss += (p[0] - b[i].x) * (p[0] - b[i].x) + (p[1] - b[i].y) * (p[1] - b[i].y);
    }
    r.residual = std::sqrt(ss / n);
    return r;
}

void ReferenceShapeSet::validate(int num_landmarks) const {
    if (views < 1) throw ConfigError("reference set: needs at least one view");
    std::vector<int> count(views, 0);
    for (const auto& s : shapes) {
        if (s.view < 0 || s.view >= views) throw ConfigError("reference set: view id out of range");
        if (int(s.points.size()) != num_landmarks) throw ConfigError("reference set: landmark count mismatch");
        ++count[s.view];
    }
    for (int v = 0; v < views; ++v)
        if (count[v] == 0) throw ConfigError("reference set: view " + std::to_string(v) + " has no shape");
    for (auto [a, b] : mirror_views)
        if (a < 0 || b < 0 || a >= views || b >= views || a == b) throw ConfigError("reference set: bad mirror pair");
    if (!(ipd > 0)) throw ConfigError("reference set: ipd must be positive");
}

ReferenceShapeSet reference_set_from_yaws(const std::vector<double>& yaws, double ipd) {
    ReferenceShapeSet r;
    r.views = int(yaws.size());
    r.ipd = ipd;
    const auto face = mean_face68_3d();
    for (int v = 0; v < r.views; ++v) r.shapes.push_back({v, project_face(face, yaws[v], ipd)});
    for (int v = 0; v < r.views; ++v)
        for (int u = v + 1; u < r.views; ++u)
            if (yaws[u] == -yaws[v] && yaws[v] != 0) r.mirror_views.emplace_back(v, u);
    return r;
}

ReferenceShapeSet default_reference_set(int views, double step, double ipd) {
    if (views < 1) throw ConfigError("reference set: needs at least one view");
    std::vector<double> yaws(views);
    for (int v = 0; v < views; ++v) yaws[v] = (v - (views - 1) / 2.0) * step;
    return reference_set_from_yaws(yaws, ipd);
}

nlohmann::json reference_set_to_json(const ReferenceShapeSet& r) {
    nlohmann::json j;
    j["views"] = r.views;
    j["ipd"] = r.ipd;
    j["mirror_views"] = nlohmann::json::array();
    for (auto [a, b] : r.mirror_views) j["mirror_views"].push_back({a, b});
    j["shapes"] = nlohmann::json::array();
    for (const auto& s : r.shapes) j["shapes"].push_back({{"view", s.view}, {"landmarks", points_to_json(s.points)}});
    return j;
}

ReferenceShapeSet reference_set_from_json(const nlohmann::json& j) {
    ReferenceShapeSet r;
    try {
        r.views = j.at("views").get<int>();
        r.ipd = j.value("ipd", 48.0);
        for (const auto& p : j.value("mirror_views", nlohmann::json::array()))
            r.mirror_views.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
        for (const auto& s : j.at("shapes"))
            r.shapes.push_back({s.at("view").get<int>(), points_from_json(s.at("landmarks"))});
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("reference set: ") + e.what());
    }
    return r;
}

ReferenceShapeSet load_reference_set(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("reference set " + path + ": " + e.what());
    }
    return reference_set_from_json(j);
}

double interocular_distance(const std::vector<Point>& pts) {
    if (pts.size() != 68) throw DomainError("interocular distance needs 68 landmarks");
    double lx = 0, ly = 0, rx = 0, ry = 0;
    for (int i = 36; i < 42; ++i) lx += pts[i].x / 6, ly += pts[i].y / 6;
    for (int i = 42; i < 48; ++i) rx += pts[i].x / 6, ry += pts[i].y / 6;
    return std::hypot(rx - lx, ry - ly);
}

std::vector<Point> mirror_points(const std::vector<Point>& pts, const std::vector<int>& mirror) {
    if (mirror.size() != pts.size()) throw DomainError("mirror table does not match the landmark count");
    std::vector<Point> r(pts.size());
    for (size_t k = 0; k < pts.size(); ++k) r[size_t(mirror[k])] = {-pts[k].x, pts[k].y};
    return r;
}

namespace {

struct Nearest {
    int index = -1;
    ProcrustesResult fit;
};

Nearest nearest_reference(const std::vector<Point>& pts, const ReferenceShapeSet& refs) {
    Nearest best;
    for (size_t i = 0; i < refs.shapes.size(); ++i) {
        ProcrustesResult r = procrustes_align(pts, refs.shapes[i].points);
        if (best.index < 0 || r.residual < best.fit.residual ||
            (r.residual == best.fit.residual && refs.shapes[i].view < refs.shapes[size_t(best.index)].view)) {
            best.index = int(i);
            best.fit = r;
        }
    }
    if (best.index < 0) throw ConfigError("reference set is empty");
    return best;
}

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0) {
    // splitmix64 finaliser over the combined words.
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (a + 1) + 0xbf58476d1ce4e5b9ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

}  // namespace

int assign_viewpoint(const std::vector<Point>& pts, const ReferenceShapeSet& refs) {
    return refs.shapes[size_t(nearest_reference(pts, refs).index)].view;
}

NormalizedShape normalize_example(const std::vector<Point>& pts, const ReferenceShapeSet& refs) {
    Nearest n = nearest_reference(pts, refs);
    NormalizedShape r;
    r.view = refs.shapes[size_t(n.index)].view;
    r.transform = n.fit.transform;
    r.residual = n.fit.residual;
    r.points.resize(pts.size());
    for (size_t i = 0; i < pts.size(); ++i) {
        auto p = r.transform.apply(pts[i].x, pts[i].y);
        r.points[i] = {p[0], p[1]};
    }
    return r;
}

KMeansResult kmeans(const std::vector<std::vector<double>>& data, int k, uint64_t seed, int max_iter) {
    const int n = int(data.size());
    if (k < 1) throw DomainError("kmeans: k must be >= 1");
    if (n < k) throw DataError("kmeans: " + std::to_string(n) + " examples for " + std::to_string(k) + " clusters");
    Rng rng(seed);
    KMeansResult r;
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    int first = rng.uniform_int(n);
    r.centers.push_back(data[first]);
    while (int(r.centers.size()) < k) {
        double total = 0;
        for (int i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], sqdist(data[i], r.centers.back()));
            total += d2[i];
        }
        int pick = n - 1;
        if (total > 0) {
            double u = rng.uniform() * total, acc = 0;
            for (int i = 0; i < n; ++i) {
                acc += d2[i];
                if (d2[i] > 0 && u < acc) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.uniform_int(n);
        }
        r.centers.push_back(data[pick]);
    }
    r.assignment.assign(n, -1);
    for (r.iterations = 0; r.iterations < max_iter; ++r.iterations) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bd = sqdist(data[i], r.centers[0]);
            for (int c = 1; c < k; ++c) {
                double d = sqdist(data[i], r.centers[c]);
                if (d < bd) bd = d, best = c;
            }
            if (best != r.assignment[i]) changed = true, r.assignment[i] = best;
        }
        if (!changed) break;
        std::vector<std::vector<double>> sum(k, std::vector<double>(data[0].size(), 0.0));
        std::vector<int> cnt(k, 0);
        for (int i = 0; i < n; ++i) {
            ++cnt[r.assignment[i]];
            for (size_t d = 0; d < data[i].size(); ++d) sum[r.assignment[i]][d] += data[i][d];
        }
        for (int c = 0; c < k; ++c)
            if (cnt[c] > 0)
                for (size_t d = 0; d < sum[c].size(); ++d) r.centers[c][d] = sum[c][d] / cnt[c];
    }
    r.distortion = 0;
    for (int i = 0; i < n; ++i) r.distortion += sqdist(data[i], r.centers[r.assignment[i]]);
    return r;
}

std::vector<double> part_shape_vector(const Topology& t, int part, const std::vector<Point>& pts) {
    const auto& lm = t.part_landmarks[part];
    double cx = 0, cy = 0;
    for (int k : lm) cx += pts[k].x, cy += pts[k].y;
    cx /= lm.size(), cy /= lm.size();
    std::vector<double> v;
    v.reserve(2 * lm.size());
    for (int k : lm) v.push_back(pts[k].x - cx), v.push_back(pts[k].y - cy);
    return v;
}

KMeansResult cluster_part_shapes(const std::vector<std::vector<double>>& shapes, int k, uint64_t seed) {
    if (int(shapes.size()) < k)
        throw DataError("shape clustering: only " + std::to_string(shapes.size()) + " examples for S=" +
                        std::to_string(k) + "; lower the number of shape mixtures");
    return kmeans(shapes, k, seed);
}

std::vector<char> quadrant_mask(const std::vector<Point>& layout, double a, double b, int q) {
    std::vector<char> m(layout.size(), 0);
    for (size_t i = 0; i < layout.size(); ++i) {
        const bool in_x = (q & 1) ? layout[i].x > a : layout[i].x < a;
        const bool in_y = (q & 2) ? layout[i].y > b : layout[i].y < b;
        m[i] = in_x && in_y;
    }
    return m;
}

std::vector<char> sample_quadrant_occlusion(const std::vector<Point>& layout, Rng& rng) {
    if (layout.empty()) throw DomainError("sample_quadrant_occlusion: empty layout");
    double x0 = layout[0].x, x1 = x0, y0 = layout[0].y, y1 = y0;
    for (const auto& p : layout) {
        x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
    }
    const double a = rng.uniform(x0, x1);
    const double b = rng.uniform(y0, y1);
    const int q = rng.uniform_int(4);
    return quadrant_mask(layout, a, b, q);
}

OcclusionLibrary cluster_occlusion_patterns(const std::vector<uint64_t>& masks, int nbits, int k, uint64_t seed) {
    if (k < 1) throw ConfigError("occlusion clustering: O must be >= 1");
    if (nbits < 1 || nbits > 64) throw DomainError("occlusion clustering: bad mask width");
    const uint64_t full = nbits == 64 ? ~0ull : (1ull << nbits) - 1;
    std::map<uint64_t, int> freq;
    for (uint64_t m : masks) ++freq[m & full];

    std::vector<uint64_t> lib;
    if (int(freq.size()) <= k) {
        for (const auto& [m, c] : freq) lib.push_back(m);
    } else {
        std::vector<std::vector<double>> data;
        data.reserve(masks.size());
        for (uint64_t m : masks) {
            std::vector<double> v(nbits);
            for (int b = 0; b < nbits; ++b) v[b] = double((m >> b) & 1);
            data.push_back(std::move(v));
        }
        KMeansResult km = kmeans(data, k, seed);
        for (const auto& c : km.centers) {
            uint64_t m = 0;
            for (int b = 0; b < nbits; ++b)
                if (c[b] >= 0.5) m |= 1ull << b;
            lib.push_back(m);
        }
    }
    // All-visible always present: replace the closest center when absent.
    if (std::find(lib.begin(), lib.end(), 0ull) == lib.end()) {
        if (int(lib.size()) < k) {
            lib.push_back(0);
        } else {
            size_t best = 0;
            for (size_t i = 1; i < lib.size(); ++i)
                if (__builtin_popcountll(lib[i]) < __builtin_popcountll(lib[best])) best = i;
            lib[best] = 0;
        }
    }
    std::vector<uint64_t> uniq;
    for (uint64_t m : lib)
        if (std::find(uniq.begin(), uniq.end(), m) == uniq.end()) uniq.push_back(m);
    auto add = [&](uint64_t m) {
        if (int(uniq.size()) < k && std::find(uniq.begin(), uniq.end(), m) == uniq.end()) uniq.push_back(m);
    };
    add(full);
    std::vector<std::pair<int, uint64_t>> by_freq;
    for (const auto& [m, c] : freq) by_freq.emplace_back(-c, m);
    std::sort(by_freq.begin(), by_freq.end());
    for (const auto& [c, m] : by_freq) add(m);
    std::sort(uniq.begin(), uniq.end(), [](uint64_t a, uint64_t b) {
        int pa = __builtin_popcountll(a), pb = __builtin_popcountll(b);
        return pa != pb ? pa < pb : a < b;
    });
    // Parts with very few landmarks cannot fill every state; repeat all-visible.
    while (int(uniq.size()) < k) uniq.push_back(0);

    OcclusionLibrary r;
    r.patterns = uniq;
    r.assignment.reserve(masks.size());
    for (uint64_t m : masks) {
        int best = 0, bd = 65;
        for (int i = 0; i < k; ++i) {
            int d = __builtin_popcountll((m & full) ^ r.patterns[i]);
            if (d < bd) bd = d, best = i;
        }
        r.assignment.push_back(best);
    }
    return r;
}

std::vector<SupervisedExample> generate_virtual_positives(const SupervisedExample& ex, int count, Rng& rng) {
    if (count < 0) throw DomainError("virtual positive count must be >= 0");
    std::vector<SupervisedExample> r;
    r.push_back(ex);
    r.back().variant = 0;
    for (int i = 0; i < count; ++i) {
        SupervisedExample v = ex;
        v.variant = i + 1;
        auto m = sample_quadrant_occlusion(ex.landmarks, rng);
        for (size_t k = 0; k < m.size(); ++k) v.occluded[k] = char(ex.occluded[k] || m[k]);
        r.push_back(std::move(v));
    }
    return r;
}

namespace {

uint64_t part_mask(const Topology& t, int part, const std::vector<char>& occ) {
    uint64_t m = 0;
    const auto& lm = t.part_landmarks[part];
    for (size_t i = 0; i < lm.size(); ++i)
        if (occ[lm[i]]) m |= 1ull << i;
    return m;
}

std::vector<char> mirror_flags(const std::vector<char>& occ, const std::vector<int>& mirror) {
    std::vector<char> r(occ.size());
    for (size_t k = 0; k < occ.size(); ++k) r[size_t(mirror[k])] = occ[k];
    return r;
}

}  // namespace

Supervision supervise(const DatasetManifest& data, const Topology& topology, const ReferenceShapeSet& refs,
                      const SupervisionOptions& opt) {
    const Topology& t = topology;
    if (data.faces.empty()) throw DataError("supervision: manifest has no examples");
    if (opt.shapes < 1 || opt.occlusions < 1) throw ConfigError("supervision: S and O must be >= 1");
    refs.validate(t.num_landmarks);
    if (!refs.mirror_views.empty() && !t.has_mirror())
        throw ConfigError("supervision: mirrored views need a landmark correspondence table");

    std::string bad;
    for (size_t i = 0; i < data.faces.size(); ++i) {
        const auto& f = data.faces[i];
        bool ok = int(f.landmarks.size()) == t.num_landmarks &&
                  (f.occluded.empty() || int(f.occluded.size()) == t.num_landmarks);
        for (const auto& p : f.landmarks) ok = ok && std::isfinite(p.x) && std::isfinite(p.y);
        if (!ok) bad += (bad.empty() ? "" : ", ") + std::to_string(i) + " (" + f.image + ")";
    }
    if (!bad.empty()) throw DataError("supervision: invalid examples: " + bad);

    Supervision s;
    s.topology = t;
    s.views = refs.views;
    s.shapes = opt.shapes;
    s.occlusions = opt.occlusions;
    s.mirror_views = refs.mirror_views;
    s.ipd = refs.ipd;
    const int np = t.num_parts(), nf = int(data.faces.size());

    std::vector<SupervisedExample> base(nf);
    parallel_for(nf, opt.workers, [&](int i) {
        const auto& f = data.faces[i];
        NormalizedShape ns;
        try {
            ns = normalize_example(f.landmarks, refs);
        } catch (const DomainError& e) {
            throw DataError("supervision: example " + std::to_string(i) + ": " + e.what());
        }
        SupervisedExample& ex = base[i];
        ex.face = i;
        ex.image = f.image;
        ex.view = ns.view;
        ex.transform = ns.transform;
        ex.landmarks = ns.points;
        ex.occluded.assign(t.num_landmarks, 0);
        for (size_t k = 0; k < f.occluded.size(); ++k) ex.occluded[k] = f.occluded[k];
        ex.part_shape.assign(np, 0);
        ex.part_occ.assign(np, 0);
    });

    // Views in the target role of a mirror pair are clustered in their source's frame.
    std::vector<int> source_of(s.views, -1);
    for (auto [a, b] : s.mirror_views) source_of[b] = a;

    for (int v = 0; v < s.views; ++v) {
        if (source_of[v] >= 0) continue;
        for (int p = 0; p < np; ++p) {
            std::vector<std::vector<double>> shapes;
            std::vector<std::pair<int, int>> owner;  // (example, part in the example's own frame)
            for (int i = 0; i < nf; ++i) {
                const auto& ex = base[i];
                if (ex.view == v) {
                    shapes.push_back(part_shape_vector(t, p, ex.landmarks));
                    owner.emplace_back(i, p);
                } else if (source_of[ex.view] == v) {
                    shapes.push_back(part_shape_vector(t, p, mirror_points(ex.landmarks, t.landmark_mirror)));
                    owner.emplace_back(i, t.part_mirror[p]);
                }
            }
            if (int(shapes.size()) < s.shapes)
                throw DataError("supervision: view " + std::to_string(v) + " part " + t.part_names[p] + " has " +
                                std::to_string(shapes.size()) + " examples for S=" + std::to_string(s.shapes) +
                                "; lower the number of shape mixtures");
            KMeansResult km = cluster_part_shapes(shapes, s.shapes, mix_seed(opt.seed, uint64_t(v), uint64_t(p)));
            for (size_t e = 0; e < owner.size(); ++e) base[owner[e].first].part_shape[owner[e].second] = km.assignment[e];
        }
    }

    std::vector<std::vector<SupervisedExample>> variants(nf);
    parallel_for(nf, opt.workers, [&](int i) {
        Rng rng(mix_seed(opt.seed, 0x5157ull, uint64_t(i)));
        variants[i] = generate_virtual_positives(base[i], opt.virtual_count, rng);
    });
    for (auto& vs : variants)
        for (auto& e : vs) s.examples.push_back(std::move(e));

    s.patterns.assign(np, std::vector<std::vector<uint64_t>>(s.views, std::vector<uint64_t>(s.occlusions, 0)));
    for (int v = 0; v < s.views; ++v) {
        if (source_of[v] >= 0) continue;
        for (int p = 0; p < np; ++p) {
            std::vector<uint64_t> masks;
            std::vector<std::pair<size_t, int>> owner;
            for (size_t e = 0; e < s.examples.size(); ++e) {
                const auto& ex = s.examples[e];
                if (ex.view == v) {
                    masks.push_back(part_mask(t, p, ex.occluded));
                    owner.emplace_back(e, p);
                } else if (source_of[ex.view] == v) {
                    masks.push_back(part_mask(t, p, mirror_flags(ex.occluded, t.landmark_mirror)));
                    owner.emplace_back(e, t.part_mirror[p]);
                }
            }
            OcclusionLibrary lib = cluster_occlusion_patterns(masks, int(t.part_landmarks[p].size()), s.occlusions,
                                                              mix_seed(opt.seed, 0x0cc1ull + uint64_t(v), uint64_t(p)));
            s.patterns[p][v] = lib.patterns;
            for (size_t i = 0; i < owner.size(); ++i) s.examples[owner[i].first].part_occ[owner[i].second] = lib.assignment[i];
        }
    }
    for (auto [a, b] : s.mirror_views)
        for (int p = 0; p < np; ++p)
            for (int o = 0; o < s.occlusions; ++o) s.patterns[p][b][o] = mirror_pattern(t, p, s.patterns[t.part_mirror[p]][a][o]);

    // Landmark bits follow the snapped part patterns.
    for (auto& ex : s.examples) {
        for (int p = 0; p < np; ++p) {
            const uint64_t m = s.patterns[p][ex.view][ex.part_occ[p]];
            const auto& lm = t.part_landmarks[p];
            for (size_t i = 0; i < lm.size(); ++i) ex.occluded[lm[i]] = char((m >> i) & 1);
        }
    }
    return s;
}

Supervision derive_lowres(const Supervision& s, const Topology& lr) {
    if (lr.landmark_sources.size() != size_t(lr.num_landmarks))
        throw ConfigError("low-resolution topology needs landmark sources");
    for (int p = 0; p < lr.num_parts(); ++p)
        if (lr.part_landmarks[p].size() != 1) throw ConfigError("low-resolution topology needs one landmark per part");
    Supervision r;
    r.topology = lr;
    r.views = 1;
    r.shapes = 1;
    r.occlusions = 2;
    r.ipd = s.ipd;
    r.patterns.assign(lr.num_parts(), {{0, 1}});
    for (const auto& ex : s.examples) {
        SupervisedExample e;
        e.face = ex.face;
        e.variant = ex.variant;
        e.image = ex.image;
        e.view = 0;
        e.transform = ex.transform;
        e.landmarks.resize(lr.num_landmarks);
        e.occluded.resize(lr.num_landmarks);
        for (int k = 0; k < lr.num_landmarks; ++k) {
            const auto& src = lr.landmark_sources[k];
            double x = 0, y = 0;
            int occ = 0;
            for (int q : src) {
                if (q < 0 || q >= int(ex.landmarks.size())) throw ConfigError("low-resolution source index out of range");
                x += ex.landmarks[q].x, y += ex.landmarks[q].y;
                occ += ex.occluded[q] ? 1 : 0;
            }
            e.landmarks[k] = {x / src.size(), y / src.size()};
            e.occluded[k] = char(2 * occ >= int(src.size()));
        }
        e.part_shape.assign(lr.num_parts(), 0);
        e.part_occ.assign(lr.num_parts(), 0);
        for (int k = 0; k < lr.num_landmarks; ++k) e.part_occ[lr.landmark_part[k]] = e.occluded[k];
        r.examples.push_back(std::move(e));
    }
    return r;
}

nlohmann::json supervision_to_json(const Supervision& s) {
    nlohmann::json j;
    j["format"] = "hpm-supervision";
    j["version"] = 1;
    j["topology"] = topology_to_json(s.topology);
    j["views"] = s.views;
    j["shapes"] = s.shapes;
    j["occlusions"] = s.occlusions;
    j["ipd"] = s.ipd;
    j["mirror_views"] = nlohmann::json::array();
    for (auto [a, b] : s.mirror_views) j["mirror_views"].push_back({a, b});
    j["patterns"] = s.patterns;
    auto& ex = j["examples"] = nlohmann::json::array();
    for (const auto& e : s.examples) {
        std::vector<int> occ(e.occluded.begin(), e.occluded.end());
        ex.push_back({{"face", e.face},
                      {"variant", e.variant},
                      {"image", e.image},
                      {"view", e.view},
                      {"transform", {e.transform.a, e.transform.b, e.transform.tx, e.transform.ty}},
                      {"landmarks", points_to_json(e.landmarks)},
                      {"occluded", occ},
                      {"part_shape", e.part_shape},
                      {"part_occ", e.part_occ}});
    }
    return j;
}

Supervision supervision_from_json(const nlohmann::json& j) {
    Supervision s;
    try {
        if (j.at("format") != "hpm-supervision") throw FormatError("supervision: unexpected format tag");
        if (j.at("version") != 1) throw FormatError("supervision: unsupported version");
        s.topology = topology_from_json(j.at("topology"));
        s.views = j.at("views").get<int>();
        s.shapes = j.at("shapes").get<int>();
        s.occlusions = j.at("occlusions").get<int>();
        s.ipd = j.at("ipd").get<double>();
        for (const auto& p : j.at("mirror_views")) s.mirror_views.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
        s.patterns = j.at("patterns").get<std::vector<std::vector<std::vector<uint64_t>>>>();
        for (const auto& e : j.at("examples")) {
            SupervisedExample x;
            x.face = e.at("face").get<int>();
            x.variant = e.at("variant").get<int>();
            x.image = e.at("image").get<std::string>();
            x.view = e.at("view").get<int>();
            const auto& tr = e.at("transform");
            x.transform = {tr.at(0).get<double>(), tr.at(1).get<double>(), tr.at(2).get<double>(), tr.at(3).get<double>()};
            x.landmarks = points_from_json(e.at("landmarks"));
            for (int b : e.at("occluded").get<std::vector<int>>()) x.occluded.push_back(char(b != 0));
            x.part_shape = e.at("part_shape").get<std::vector<int>>();
            x.part_occ = e.at("part_occ").get<std::vector<int>>();
            if (int(x.landmarks.size()) != s.topology.num_landmarks || int(x.occluded.size()) != s.topology.num_landmarks ||
                int(x.part_shape.size()) != s.topology.num_parts() || int(x.part_occ.size()) != s.topology.num_parts())
                throw FormatError("supervision: example dimensions do not match the topology");
            s.examples.push_back(std::move(x));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("supervision: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("supervision: ") + e.what());
    }
    return s;
}

void save_supervision(const Supervision& s, const std::string& path) {
    write_text_file(path, supervision_to_json(s).dump(1) + "\n");
}

Supervision load_supervision(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("supervision " + path + ": " + e.what());
    }
    return supervision_from_json(j);
}

}  // namespace hpm
