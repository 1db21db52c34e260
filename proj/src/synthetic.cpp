#include "hpm/synthetic.hpp"

#include <algorithm>
#include <cmath>

namespace hpm {

Model random_model(Rng& rng, const RandomModelOptions& opt) {
    ModelSpec spec;
    spec.mixture = "full";
    Topology& t = spec.topology;
    t.num_landmarks = opt.parts * opt.landmarks_per_part;
    int next = 0;
    for (int p = 0; p < opt.parts; ++p) {
        t.part_names.push_back("p" + std::to_string(p));
        t.part_parent.push_back(p == 0 ? -1 : rng.uniform_int(p));
        std::vector<int> lms;
        for (int i = 0; i < opt.landmarks_per_part; ++i) lms.push_back(next++);
        t.part_landmarks.push_back(lms);
    }
    t.finalize();
    auto& st = spec.states;
    st.views = opt.views;
    st.shapes = opt.shapes;
    st.occlusions = opt.occlusions;
    const int sv = st.shape_states();
    st.patterns.resize(opt.parts);
    for (int p = 0; p < opt.parts; ++p) {
        st.patterns[p].resize(opt.views);
        const uint64_t full = (1ull << opt.landmarks_per_part) - 1;
        for (int v = 0; v < opt.views; ++v)
            for (int o = 0; o < opt.occlusions; ++o)
                st.patterns[p][v].push_back(o == 0 ? 0 : (rng.next() & full));
    }
    spec.template_rows = spec.template_cols = opt.template_size;
    spec.part_anchor.assign(opt.parts, std::vector<Offset>(sv));
    spec.landmark_anchor.assign(t.num_landmarks, std::vector<Offset>(sv));
    auto rnd = [&](int r) { return rng.uniform_int(2 * r + 1) - r; };
    for (int p = 0; p < opt.parts; ++p)
        for (int s = 0; s < sv; ++s)
            if (p != t.root) spec.part_anchor[p][s] = {rnd(opt.max_part_anchor), rnd(opt.max_part_anchor)};
    for (int k = 0; k < t.num_landmarks; ++k)
        for (int s = 0; s < sv; ++s) spec.landmark_anchor[k][s] = {rnd(opt.max_landmark_anchor), rnd(opt.max_landmark_anchor)};

    Model m(spec);
    const auto& L = m.layout;
    m.w[0] = rng.normal();
    for (size_t i = L.appearance_begin(); i < L.appearance_end(); ++i) m.w[i] = 0.3 * rng.normal();
    auto set_spring = [&](size_t i) {
        m.w[i] = rng.uniform(-0.5, 0.5);
        m.w[i + 1] = rng.uniform(-0.5, 0.5);
        m.w[i + 2] = -rng.uniform(0.05, 1.0);
        m.w[i + 3] = -rng.uniform(0.05, 1.0);
    };
    for (int s = 0; s < sv; ++s) {
        for (int p = 0; p < opt.parts; ++p)
            if (p != t.root) set_spring(L.part_spring(p, s));
        for (int k = 0; k < t.num_landmarks; ++k) set_spring(L.landmark_spring(k, s));
    }
    for (size_t i = L.biases_begin(); i < L.size(); ++i) {
        if (is_neg_inf(m.w[i])) continue;
        m.w[i] = rng.uniform() < opt.neg_inf_bias_prob ? kNegInf : rng.normal();
    }
    return m;
}

FeatureLevel random_level(Rng& rng, int rows, int cols, int dim) {
    FeatureLevel f;
    f.rows = rows;
    f.cols = cols;
    f.dim = dim;
    f.cells.resize(size_t(rows) * cols * dim);
    for (auto& c : f.cells) c = float(rng.uniform(0.0, 0.4));
    return f;
}

Configuration random_configuration(Rng& rng, const ModelSpec& spec, int rows, int cols) {
    const auto& t = spec.topology;
    Configuration c;
    c.parts.resize(t.num_parts());
    c.landmarks.resize(t.num_landmarks);
    const int S = spec.states.shapes, O = spec.states.occlusions;
    const int view = rng.uniform_int(spec.states.views);
    for (auto& p : c.parts) p = {{rng.uniform_int(rows), rng.uniform_int(cols)}, view * S + rng.uniform_int(S), rng.uniform_int(O)};
    for (int k = 0; k < t.num_landmarks; ++k) {
        const auto& p = c.parts[t.landmark_part[k]];
        c.landmarks[k] = {{rng.uniform_int(rows), rng.uniform_int(cols)}, p.shape, p.occ};
    }
    return c;
}

std::vector<std::array<double, 3>> mean_face68_3d() {
    std::vector<std::array<double, 3>> f(68);
    for (int i = 0; i <= 16; ++i) {
        double phi = M_PI * i / 16.0;
        double x = -0.98 * std::cos(phi) * (1.0 - 0.12 * std::sin(phi));
        double y = 0.1 + 1.15 * std::pow(std::sin(phi), 0.8);
        double z = -0.55 * std::fabs(std::cos(phi)) + 0.05;
        f[i] = {x, y, z};
    }
    for (int i = 0; i < 5; ++i) {
        double u = i / 4.0;
        double x = -0.85 + 0.7 * u;
        double y = -0.33 - 0.12 * std::sin(M_PI * (0.15 + 0.85 * u));
        f[17 + i] = {x, y, 0.18 - 0.1 * (1 - u)};
        f[26 - i] = {-x, y, 0.18 - 0.1 * (1 - u)};
    }
    for (int i = 0; i < 4; ++i) f[27 + i] = {0.0, -0.05 + 0.2 * i, 0.22 + 0.11 * i};
    const double nx[5] = {-0.2, -0.1, 0.0, 0.1, 0.2};
    const double ny[5] = {0.63, 0.66, 0.68, 0.66, 0.63};
    const double nz[5] = {0.30, 0.38, 0.42, 0.38, 0.30};
    for (int i = 0; i < 5; ++i) f[31 + i] = {nx[i], ny[i], nz[i]};
    const double ex[6] = {-0.72, -0.6, -0.4, -0.28, -0.4, -0.6};
    const double ey[6] = {0.0, -0.08, -0.08, 0.0, 0.06, 0.06};
    for (int i = 0; i < 6; ++i) f[36 + i] = {ex[i], ey[i], 0.05};
    // Right eye mirrors the left: 42..47 pair with 39, 38, 37, 36, 41, 40.
    const int emap[6] = {39, 38, 37, 36, 41, 40};
    for (int i = 0; i < 6; ++i) f[42 + i] = {-f[emap[i]][0], f[emap[i]][1], f[emap[i]][2]};
    const double mx[12] = {-0.4, -0.26, -0.1, 0.0, 0.1, 0.26, 0.4, 0.26, 0.12, 0.0, -0.12, -0.26};
    const double my[12] = {0.95, 0.88, 0.84, 0.86, 0.84, 0.88, 0.95, 1.04, 1.08, 1.09, 1.08, 1.04};
    for (int i = 0; i < 12; ++i) f[48 + i] = {mx[i], my[i], 0.28 - 0.5 * mx[i] * mx[i]};
    const double ix[8] = {-0.34, -0.12, 0.0, 0.12, 0.34, 0.12, 0.0, -0.12};
    const double iy[8] = {0.95, 0.92, 0.93, 0.92, 0.95, 0.98, 0.99, 0.98};
    for (int i = 0; i < 8; ++i) f[60 + i] = {ix[i], iy[i], 0.26 - 0.5 * ix[i] * ix[i]};
    return f;
}

std::vector<Point> project_face(const std::vector<std::array<double, 3>>& face, double yaw_deg, double ipd) {
    const double t = yaw_deg * M_PI / 180.0, c = std::cos(t), s = std::sin(t);
    std::vector<Point> pts(face.size());
    for (size_t i = 0; i < face.size(); ++i) pts[i] = {c * face[i][0] + s * face[i][2], face[i][1]};
    double mx = 0, my = 0;
    for (const auto& p : pts) mx += p.x, my += p.y;
    mx /= pts.size();
    my /= pts.size();
    double scale = ipd;
    if (face.size() == 68) {
        double lx = 0, ly = 0, rx = 0, ry = 0;
        for (int i = 36; i < 42; ++i) lx += pts[i].x / 6, ly += pts[i].y / 6;
        for (int i = 42; i < 48; ++i) rx += pts[i].x / 6, ry += pts[i].y / 6;
        scale = ipd / std::hypot(rx - lx, ry - ly);
    }
    for (auto& p : pts) p = {(p.x - mx) * scale, (p.y - my) * scale};
    return pts;
}

}  // namespace hpm
