#include "hpm/planted.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "hpm/parallel.hpp"
#include "hpm/supervision.hpp"
#include "hpm/synthetic.hpp"
#include "hpm/topology.hpp"

namespace hpm {

namespace {

constexpr float kBackground = 0.5f;
constexpr float kOccluder = 0.3f;

uint64_t stream_seed(uint64_t seed, uint64_t kind, uint64_t index) {
    uint64_t z = seed ^ (kind * 0x9e3779b97f4a7c15ull) ^ (index + 0x632be59bd9b4e019ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

void add_clutter(Image& img, const PlantedOptions& opt, Rng& rng, const Box* avoid) {
    for (int i = 0, tries = 0; i < opt.clutter && tries < 100 * (opt.clutter + 1); ++tries) {
        double x = rng.uniform(0, img.width), y = rng.uniform(0, img.height);
        if (avoid && x > avoid->x0 - 2 * opt.patch_radius && x < avoid->x1 + 2 * opt.patch_radius &&
            y > avoid->y0 - 2 * opt.patch_radius && y < avoid->y1 + 2 * opt.patch_radius)
            continue;
        draw_planted_patch(img, rng.uniform_int(68), x, y, opt.patch_radius, opt.contrast);
        ++i;
    }
}

std::vector<std::array<int, 2>> snap_to_cells(const std::vector<Point>& pts, int cell_size) {
    std::vector<std::array<int, 2>> cells(pts.size());
    std::set<std::array<int, 2>> taken;
    for (size_t k = 0; k < pts.size(); ++k) {
        const double gx = pts[k].x / cell_size, gy = pts[k].y / cell_size;
        std::array<int, 2> best{};
        double best_d = INFINITY;
        const int cx = int(std::lround(gx)), cy = int(std::lround(gy));
        for (int r = 0; r <= 3 && !std::isfinite(best_d); ++r)
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    std::array<int, 2> c{cx + dx, cy + dy};
                    if (taken.count(c)) continue;
                    const double d = std::hypot(c[0] - gx, c[1] - gy);
                    if (d < best_d) best_d = d, best = c;
                }
        if (!std::isfinite(best_d)) throw ConfigError("planted layout: no free cell near landmark " + std::to_string(k));
        taken.insert(best);
        cells[k] = best;
    }
    return cells;
}

}  // namespace

double planted_orientation(int k) {
    const auto& mirror = face68_mirror();
    const int m = k < int(mirror.size()) ? mirror[k] : k;
    if (m == k) return k % 2 ? 1.5 * M_PI : 0.5 * M_PI;
    const double base = std::fmod(std::min(k, m) * 0.6180339887498949, 1.0) * 2 * M_PI;
    return k < m ? base : M_PI - base;
}

void draw_planted_patch(Image& img, int k, double x, double y, double radius, double contrast) {
    const double t = planted_orientation(k), nx = std::cos(t), ny = std::sin(t);
    const int x0 = std::max(0, int(std::floor(x - radius))), x1 = std::min(img.width - 1, int(std::ceil(x + radius)));
    const int y0 = std::max(0, int(std::floor(y - radius))), y1 = std::min(img.height - 1, int(std::ceil(y + radius)));
    for (int py = y0; py <= y1; ++py)
        for (int px = x0; px <= x1; ++px) {
            const double dx = px - x, dy = py - y;
            const double wgt = std::clamp((radius - std::hypot(dx, dy)) / 1.5, 0.0, 1.0);
            if (wgt <= 0) continue;
            const double v = kBackground + wgt * 0.5 * contrast * std::tanh((dx * nx + dy * ny) / 0.75);
            for (int c = 0; c < img.channels; ++c) img.at(px, py, c) = float(v);
        }
}

std::vector<std::array<int, 2>> planted_layout(const PlantedOptions& opt, int view) {
    static const auto face3d = mean_face68_3d();
    if (view == 1) {
        const auto& mirror = face68_mirror();
        auto base = planted_layout(opt, 0);
        std::vector<std::array<int, 2>> cells(base.size());
        for (size_t k = 0; k < base.size(); ++k) cells[k] = {-base[mirror[k]][0], base[mirror[k]][1]};
        return cells;
    }
    const auto ref = project_face(face3d, -opt.yaw, opt.ipd);
    std::vector<std::array<int, 2>> best_cells;
    double best_err = INFINITY;
    // Snapping spreads crowded landmarks apart; shrink the projection until the snapped layout has unit scale.
    for (int step = 0; step <= 40; ++step) {
        const auto pts = project_face(face3d, -opt.yaw, opt.ipd * (1.0 - 0.005 * step));
        std::vector<std::array<int, 2>> cells;
        try {
            cells = snap_to_cells(pts, opt.cell_size);
        } catch (const ConfigError&) {
            continue;
        }
        std::vector<Point> snapped(cells.size());
        for (size_t k = 0; k < cells.size(); ++k)
            snapped[k] = {double(cells[k][0] * opt.cell_size), double(cells[k][1] * opt.cell_size)};
        const double err = std::fabs(procrustes_align(snapped, ref).transform.scale() - 1.0);
        if (err < best_err) best_err = err, best_cells = std::move(cells);
    }
    if (best_cells.empty()) throw ConfigError("planted layout: face too small for its cells");
    return best_cells;
}

PlantedFace render_planted_face(const PlantedOptions& opt, Rng& rng) {
    static const Topology topo = face68_topology();
    PlantedFace r;
    r.view = rng.uniform_int(2);
    auto cells = planted_layout(opt, r.view);
    std::set<std::array<int, 2>> taken(cells.begin(), cells.end());
    for (int p = 0; p < topo.num_parts(); ++p) {
        if (p == topo.root || rng.uniform() >= opt.part_jitter) continue;
        const int dir = rng.uniform_int(4);
        const int dx = dir == 0 ? 1 : dir == 1 ? -1 : 0, dy = dir == 2 ? 1 : dir == 3 ? -1 : 0;
        // Moves that would land on another part's landmark are dropped.
        std::set<std::array<int, 2>> rest = taken;
        for (int k : topo.part_landmarks[p]) rest.erase(cells[k]);
        bool ok = true;
        for (int k : topo.part_landmarks[p])
            if (rest.count({cells[k][0] + dx, cells[k][1] + dy})) ok = false;
        if (!ok) continue;
        for (int k : topo.part_landmarks[p]) cells[k] = {cells[k][0] + dx, cells[k][1] + dy};
        taken = rest;
        for (int k : topo.part_landmarks[p]) taken.insert(cells[k]);
    }
    int x0 = INT32_MAX, x1 = INT32_MIN, y0 = INT32_MAX, y1 = INT32_MIN;
    for (auto& c : cells) {
        x0 = std::min(x0, c[0]), x1 = std::max(x1, c[0]);
        y0 = std::min(y0, c[1]), y1 = std::max(y1, c[1]);
    }
    const int gw = opt.width / opt.cell_size - 2, gh = opt.height / opt.cell_size - 2;
    const int lo_x = 2 - x0, hi_x = gw - 3 - x1, lo_y = 2 - y0, hi_y = gh - 3 - y1;
    if (hi_x < lo_x || hi_y < lo_y) throw ConfigError("planted image too small for the face");
    const int tx = lo_x + rng.uniform_int(hi_x - lo_x + 1), ty = lo_y + rng.uniform_int(hi_y - lo_y + 1);
    const double cs = opt.cell_size, h = (cs - 1) / 2.0;
    std::vector<Point> pts(cells.size());
    for (size_t k = 0; k < cells.size(); ++k)
        pts[k] = {cs * (cells[k][0] + tx + 1) + h, cs * (cells[k][1] + ty + 1) + h};

    r.image = Image(opt.width, opt.height, 1, kBackground);
    Box b = landmark_box(pts, 0.0);
    add_clutter(r.image, opt, rng, &b);
    std::vector<char> occ(pts.size(), 0);
    if (rng.uniform() < opt.occluder_rate) {
        r.occluder = true;
        const double a = rng.uniform(b.x0, b.x1), c = rng.uniform(b.y0, b.y1);
        const int q = rng.uniform_int(4);
        occ = quadrant_mask(pts, a, c, q);
        const double pad = opt.patch_radius + 2;
        const double qx0 = (q & 1) ? a : b.x0 - pad, qx1 = (q & 1) ? b.x1 + pad : a;
        const double qy0 = (q & 2) ? c : b.y0 - pad, qy1 = (q & 2) ? b.y1 + pad : c;
        for (int y = std::max(0, int(std::ceil(qy0))); y <= std::min(opt.height - 1, int(std::floor(qy1))); ++y)
            for (int x = std::max(0, int(std::ceil(qx0))); x <= std::min(opt.width - 1, int(std::floor(qx1))); ++x)
                r.image.at(x, y) = kOccluder;
    }
    for (size_t k = 0; k < pts.size(); ++k)
        if (!occ[k]) draw_planted_patch(r.image, int(k), pts[k].x, pts[k].y, opt.patch_radius, opt.contrast);
    r.face.landmarks = pts;
    r.face.occluded.assign(occ.begin(), occ.end());
    r.face.box = landmark_box(pts);
    return r;
}

Image render_planted_negative(const PlantedOptions& opt, Rng& rng) {
    Image img(opt.width, opt.height, 1, kBackground);
    PlantedOptions o = opt;
    o.clutter = opt.clutter * 4;
    add_clutter(img, o, rng, nullptr);
    return img;
}

PlantedDataset write_planted_dataset(const std::string& dir, const PlantedOptions& opt, int train, int test,
                                     int negatives, int workers) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "images", ec);
    fs::create_directories(fs::path(dir) / "negatives", ec);
    if (ec) throw DataError("cannot create " + dir + ": " + ec.message());
    PlantedDataset d;
    const int faces = train + test;
    std::vector<AnnotatedFace> all(faces);
    parallel_for(faces, workers, [&](int i) {
        Rng rng(stream_seed(opt.seed, 1, uint64_t(i)));
        PlantedFace f = render_planted_face(opt, rng);
        char name[64];
        std::snprintf(name, sizeof name, "images/%s_%04d.png", i < train ? "train" : "test", i < train ? i : i - train);
        f.face.image = (fs::path(dir) / name).string();
        save_png(f.image, f.face.image);
        all[i] = std::move(f.face);
    });
    d.negatives.resize(negatives);
    parallel_for(negatives, workers, [&](int i) {
        Rng rng(stream_seed(opt.seed, 2, uint64_t(i)));
        Image img = render_planted_negative(opt, rng);
        char name[64];
        std::snprintf(name, sizeof name, "negatives/neg_%04d.png", i);
        d.negatives[i] = (fs::path(dir) / name).string();
        save_png(img, d.negatives[i]);
    });
    d.train.faces.assign(all.begin(), all.begin() + train);
    d.test.faces.assign(all.begin() + train, all.end());
    d.train_manifest = (fs::path(dir) / "train.json").string();
    d.test_manifest = (fs::path(dir) / "test.json").string();
    auto relative = [&](DatasetManifest m) {
        for (auto& f : m.faces) f.image = fs::path(f.image).lexically_relative(dir).string();
        return m;
    };
    save_manifest(relative(d.train), d.train_manifest);
    save_manifest(relative(d.test), d.test_manifest);
    return d;
}

}  // namespace hpm
