#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hpm/common.hpp"
#include "hpm/model_io.hpp"
#include "hpm/synthetic.hpp"

using namespace hpm;

namespace {

// Re-sums every term of the score from raw arrays.
double resum(const Model& m, const FeatureLevel& f, const Configuration& c) {
    const auto& sp = m.spec;
    const auto& t = sp.topology;
    const int th = sp.template_rows, tw = sp.template_cols, D = f.dim;
    double total = m.w[0];
    for (int j = 0; j < t.num_parts(); ++j) {
        int i = t.part_parent[j];
        if (i < 0) continue;
        const auto& ch = c.parts[j];
        const auto& pa = c.parts[i];
        size_t bi = m.layout.part_bias(j, pa.shape, ch.shape, pa.occ, ch.occ);
        if (is_neg_inf(m.w[bi])) return kNegInf;
        double dx = ch.loc.x - pa.loc.x - sp.part_anchor[j][ch.shape].dx;
        double dy = ch.loc.y - pa.loc.y - sp.part_anchor[j][ch.shape].dy;
        size_t si = m.layout.part_spring(j, ch.shape);
        total += m.w[bi] + m.w[si] * dx + m.w[si + 1] * dy + m.w[si + 2] * dx * dx + m.w[si + 3] * dy * dy;
    }
    for (int k = 0; k < t.num_landmarks; ++k) {
        const auto& pa = c.parts[t.landmark_part[k]];
        const auto& lm = c.landmarks[k];
        if (lm.shape != pa.shape || lm.occ != pa.occ) return kNegInf;
        double b = m.w[m.layout.landmark_bias(k, pa.shape, pa.occ)];
        if (is_neg_inf(b)) return kNegInf;
        total += b;
        uint64_t mask = sp.states.patterns[t.landmark_part[k]][pa.shape / sp.states.shapes][pa.occ];
        if ((mask >> t.landmark_slot[k]) & 1) continue;
        const double* w = m.w.data() + m.layout.appearance(k, pa.shape);
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x) {
                int yy = lm.loc.y - th / 2 + y, xx = lm.loc.x - tw / 2 + x;
                if (yy < 0 || xx < 0 || yy >= f.rows || xx >= f.cols) continue;
                for (int d = 0; d < D; ++d) total += w[(y * tw + x) * D + d] * f.cell(yy, xx)[d];
            }
        double dx = lm.loc.x - pa.loc.x - sp.landmark_anchor[k][pa.shape].dx;
        double dy = lm.loc.y - pa.loc.y - sp.landmark_anchor[k][pa.shape].dy;
        size_t si = m.layout.landmark_spring(k, pa.shape);
        total += m.w[si] * dx + m.w[si + 1] * dy + m.w[si + 2] * dx * dx + m.w[si + 3] * dy * dy;
    }
    return total;
}

Model mirrored_random_model(Rng& rng) {
    // Two parts mirrored onto each other under a root, two landmarks each.
    ModelSpec spec;
    Topology& t = spec.topology;
    t.num_landmarks = 6;
    t.part_names = {"mid", "left", "right"};
    t.part_parent = {-1, 0, 0};
    t.part_landmarks = {{0, 1}, {2, 3}, {4, 5}};
    t.landmark_mirror = {1, 0, 4, 5, 2, 3};
    t.finalize();
    spec.states.views = 2;
    spec.states.shapes = 2;
    spec.states.occlusions = 2;
    spec.states.mirror_views = {{0, 1}};
    spec.states.patterns = {{{0, 1}, {0, 2}}, {{0, 1}, {0, 2}}, {{0, 3}, {0, 1}}};
    spec.template_rows = 3;
    spec.template_cols = 3;
    spec.part_anchor.assign(3, std::vector<Offset>(4));
    spec.landmark_anchor.assign(6, std::vector<Offset>(4));
    for (auto& a : spec.part_anchor)
        for (auto& o : a) o = {rng.uniform_int(5) - 2, rng.uniform_int(5) - 2};
    for (auto& a : spec.landmark_anchor)
        for (auto& o : a) o = {rng.uniform_int(3) - 1, rng.uniform_int(3) - 1};
    spec.part_anchor[0] = std::vector<Offset>(4);
    Model m(spec);
    for (size_t i = 0; i < m.w.size(); ++i)
        if (!is_neg_inf(m.w[i])) m.w[i] = rng.normal();
    for (int s = 0; s < 4; ++s) {
        for (int p = 1; p < 3; ++p) {
            size_t i = m.layout.part_spring(p, s);
            m.w[i + 2] = -std::fabs(m.w[i + 2]);
            m.w[i + 3] = -std::fabs(m.w[i + 3]);
        }
    }
    return m;
}

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("hpm_test_" + name)).string();
}

}  // namespace

TEST_CASE("zero weights score zero") {
    Rng rng(1);
    RandomModelOptions o;
    o.neg_inf_bias_prob = 0;
    Model m = random_model(rng, o);
    for (size_t i = 0; i < m.w.size(); ++i) m.w[i] = is_neg_inf(m.w[i]) ? m.w[i] : 0.0;
    auto f = random_level(rng, 8, 8);
    for (int i = 0; i < 20; ++i) {
        auto c = random_configuration(rng, m.spec, 8, 8);
        CHECK(score_configuration(m, f, c) == 0.0);
    }
}

TEST_CASE("landmark state disagreeing with its part scores the sentinel") {
    Rng rng(2);
    RandomModelOptions o;
    o.neg_inf_bias_prob = 0;
    Model m = random_model(rng, o);
    auto f = random_level(rng, 8, 8);
    auto c = random_configuration(rng, m.spec, 8, 8);
    CHECK(!is_neg_inf(score_configuration(m, f, c)));
    c.landmarks[1].occ = 1 - c.landmarks[1].occ;
    CHECK(is_neg_inf(score_configuration(m, f, c)));
    c = random_configuration(rng, m.spec, 8, 8);
    c.landmarks[0].shape = 1 - c.landmarks[0].shape;
    CHECK(is_neg_inf(score_configuration(m, f, c)));
}

TEST_CASE("cross-view part biases are fixed sentinels") {
    Rng rng(3);
    RandomModelOptions o;
    o.views = 2;
    o.neg_inf_bias_prob = 0;
    Model m = random_model(rng, o);
    auto f = random_level(rng, 8, 8);
    auto c = random_configuration(rng, m.spec, 8, 8);
    CHECK(!is_neg_inf(score_configuration(m, f, c)));
    int child = m.spec.topology.preorder[1];
    int S = m.spec.states.shapes;
    c.parts[child].shape = (c.parts[child].shape + S) % (2 * S);
    for (int k : m.spec.topology.part_landmarks[child]) c.landmarks[k].shape = c.parts[child].shape;
    CHECK(is_neg_inf(score_configuration(m, f, c)));
}

TEST_CASE("score equals the term-by-term re-summation") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        Model m = random_model(rng);
        auto f = random_level(rng, 8, 8);
        for (int i = 0; i < 20; ++i) {
            auto c = random_configuration(rng, m.spec, 8, 8);
            double a = score_configuration(m, f, c), b = resum(m, f, c);
            if (is_neg_inf(b)) CHECK(is_neg_inf(a));
            else CHECK(std::fabs(a - b) <= 1e-9);
        }
    }
    Model m = random_model(rng);
    auto f = random_level(rng, 8, 8);
    auto c = random_configuration(rng, m.spec, 8, 8);
    c.parts[0].loc.x = 8;
    CHECK_THROWS_AS(score_configuration(m, f, c), DomainError);
}

TEST_CASE("feature vector reproduces the score") {
    Rng rng(5);
    int finite = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        Model m = random_model(rng);
        for (auto& v : m.w)
            if (!is_neg_inf(v)) v = rng.normal();
        auto f = random_level(rng, 8, 8);
        auto c = random_configuration(rng, m.spec, 8, 8);
        double q = score_configuration(m, f, c);
        if (is_neg_inf(q)) {
            CHECK_THROWS_AS(assemble_feature_vector(m, f, c), DomainError);
            continue;
        }
        ++finite;
        auto psi = assemble_feature_vector(m, f, c);
        CHECK(std::fabs(psi.dot(m.w) - q) <= 1e-9);
    }
    CHECK(finite > 150);
}

TEST_CASE("fully occluded configuration has no appearance blocks") {
    Rng rng(6);
    RandomModelOptions o;
    o.neg_inf_bias_prob = 0;
    Model m = random_model(rng, o);
    for (auto& part : m.spec.states.patterns) part[0][1] = 0b111;
    auto f = random_level(rng, 8, 8);
    auto c = random_configuration(rng, m.spec, 8, 8);
    for (auto& p : c.parts) p.occ = 1;
    for (auto& l : c.landmarks) l.occ = 1;
    auto psi = assemble_feature_vector(m, f, c);
    CHECK(psi.blocks.empty());
    CHECK(delta_occlusion(m.spec, c) == 1.0);
}

TEST_CASE("configuration at the anchors has zero deformation") {
    CHECK(deformation({3, 4}, {5, 2}, {2, -2}).values() == std::array<double, 4>{0, 0, 0, 0});
    auto d = deformation({0, 0}, {1, -2}, {0, 0});
    CHECK(d.dx == -2);
    CHECK(d.dy == 1);
    CHECK(d.dxx == 4);
    CHECK(d.dyy == 1);
}

TEST_CASE("image content under an occluded landmark never changes the score") {
    Rng rng(7);
    RandomModelOptions o;
    o.neg_inf_bias_prob = 0;
    for (int trial = 0; trial < 50; ++trial) {
        Model m = random_model(rng, o);
        auto f = random_level(rng, 8, 8);
        auto c = random_configuration(rng, m.spec, 8, 8);
        double q = score_configuration(m, f, c);
        // Perturb every cell not read by a visible landmark.
        auto g = f;
        std::vector<char> used(64, 0);
        for (int k = 0; k < m.spec.topology.num_landmarks; ++k) {
            if (m.spec.landmark_occluded(k, c.landmarks[k].shape, c.landmarks[k].occ)) continue;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int y = c.landmarks[k].loc.y + dy, x = c.landmarks[k].loc.x + dx;
                    if (y >= 0 && x >= 0 && y < 8 && x < 8) used[y * 8 + x] = 1;
                }
        }
        for (int i = 0; i < 64; ++i)
            if (!used[i])
                for (int d = 0; d < 31; ++d) g.cells[i * 31 + d] = float(rng.uniform());
        CHECK(score_configuration(m, g, c) == q);
    }
}

TEST_CASE("part springs do not depend on occlusion states") {
    Rng rng(8);
    RandomModelOptions o;
    o.neg_inf_bias_prob = 0;
    for (int trial = 0; trial < 30; ++trial) {
        Model m = random_model(rng, o);
        auto f = random_level(rng, 8, 8);
        auto c1 = random_configuration(rng, m.spec, 8, 8);
        auto c2 = c1;
        for (int p = 0; p < m.spec.topology.num_parts(); ++p) {
            c2.parts[p].occ = rng.uniform_int(2);
            for (int k : m.spec.topology.part_landmarks[p]) c2.landmarks[k].occ = c2.parts[p].occ;
        }
        double diff = score_configuration(m, f, c1) - score_configuration(m, f, c2);
        Model m2 = m;
        for (int s = 0; s < m.spec.states.shape_states(); ++s)
            for (int p = 0; p < m.spec.topology.num_parts(); ++p) {
                if (p == m.spec.topology.root) continue;
                size_t i = m.layout.part_spring(p, s);
                for (int q = 0; q < 4; ++q) m2.w[i + q] = -rng.uniform();
            }
        double diff2 = score_configuration(m2, f, c1) - score_configuration(m2, f, c2);
        CHECK(diff == doctest::Approx(diff2).epsilon(1e-12));
    }
}

TEST_CASE("mirror tying") {
    Rng rng(9);
    Model m = mirrored_random_model(rng);
    Model a = tie_mirror_parameters(m);
    Model b = tie_mirror_parameters(a);
    CHECK(model_to_json(a).dump() == model_to_json(b).dump());
    CHECK(a.w == b.w);

    // Target templates are flipped source templates; flipping back recovers them.
    const auto& t = a.spec.topology;
    const size_t n = a.layout.template_size();
    for (int k = 0; k < t.num_landmarks; ++k)
        for (int l = 0; l < 2; ++l) {
            std::vector<double> src(a.appearance(t.landmark_mirror[k], l), a.appearance(t.landmark_mirror[k], l) + n);
            std::vector<double> dst(a.appearance(k, 2 + l), a.appearance(k, 2 + l) + n);
            CHECK(flip_template(src, 3, 3) == dst);
            CHECK(flip_template(dst, 3, 3) == src);
            CHECK(a.landmark_spring(k, 2 + l)[0] == -a.landmark_spring(t.landmark_mirror[k], l)[0]);
        }

    // Scoring a configuration equals scoring its mirror on the flipped level.
    for (int trial = 0; trial < 100; ++trial) {
        auto f = random_level(rng, 9, 11);
        auto c = random_configuration(rng, a.spec, 9, 11);
        double q = score_configuration(a, f, c);
        double qm = score_configuration(a, flip_level(f), mirror_configuration(a.spec, c, 11));
        if (is_neg_inf(q)) CHECK(is_neg_inf(qm));
        else CHECK(std::fabs(q - qm) <= 1e-9);
    }

    Model nomirror = m;
    nomirror.spec.topology.landmark_mirror.clear();
    nomirror.spec.topology.part_mirror.clear();
    CHECK_THROWS_AS(tie_mirror_parameters(nomirror), ConfigError);
}

TEST_CASE("folding mirrored features onto source parameters preserves scores") {
    Rng rng(10);
    Model a = tie_mirror_parameters(mirrored_random_model(rng));
    MirrorMap mm = mirror_map(a.spec);
    for (int trial = 0; trial < 100; ++trial) {
        auto f = random_level(rng, 9, 9);
        auto c = random_configuration(rng, a.spec, 9, 9);
        double q = score_configuration(a, f, c);
        if (is_neg_inf(q)) continue;
        auto psi = assemble_feature_vector(a, f, c);
        CHECK(std::fabs(fold_mirror(psi, mm).dot(a.w) - q) <= 1e-9);
    }
}

TEST_CASE("model files round trip exactly") {
    Rng rng(11);
    Model m = mirrored_random_model(rng);
    m.w[m.layout.landmark_bias(0, 0, 1)] = kNegInf;
    std::string p1 = tmp_path("m1.json"), p2 = tmp_path("m2.json");
    save_model(m, p1);
    Model r = load_model(p1);
    save_model(r, p2);
    CHECK(read_text_file(p1) == read_text_file(p2));
    CHECK(r.w == m.w);
    CHECK(is_neg_inf(r.w[r.layout.landmark_bias(0, 0, 1)]));
    CHECK(r.spec.states.patterns == m.spec.states.patterns);

    std::string text = read_text_file(p1);
    write_text_file(p2, text.substr(0, text.size() / 2));
    CHECK_THROWS_AS(load_model(p2), FormatError);

    auto j = model_to_json(m);
    j["version"] = 99;
    write_text_file(p2, j.dump());
    CHECK_THROWS_WITH_AS(load_model(p2), doctest::Contains("/version"), FormatError);
    j = model_to_json(m);
    j["spec"]["shapes"] = 3;
    write_text_file(p2, j.dump());
    CHECK_THROWS_AS(load_model(p2), FormatError);
    j = model_to_json(m);
    j["biases"].erase(0);
    write_text_file(p2, j.dump());
    CHECK_THROWS_WITH_AS(load_model(p2), doctest::Contains("/biases"), FormatError);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("occlusion loss") {
    ModelSpec spec;
    spec.topology = face68_topology();
    spec.states.patterns.assign(10, {{0, ~0ull >> 0}});
    for (int p = 0; p < 10; ++p) {
        uint64_t full = (1ull << spec.topology.part_landmarks[p].size()) - 1;
        spec.states.patterns[p] = {{0, full}};
    }
    spec.states.occlusions = 2;
    spec.part_anchor.assign(10, {Offset{}});
    spec.landmark_anchor.assign(68, {Offset{}});
    Configuration c;
    c.parts.resize(10);
    c.landmarks.resize(68);
    CHECK(delta_occlusion(spec, c) == 0.0);
    for (auto& l : c.landmarks) l.occ = 1;
    CHECK(delta_occlusion(spec, c) == 1.0);
    for (auto& l : c.landmarks) l.occ = 0;
    // Jaw and chin: 17 landmarks.
    for (int k = 0; k <= 16; ++k) c.landmarks[k].occ = 1;
    CHECK(delta_occlusion(spec, c) == 0.25);
}

TEST_CASE("default face topology") {
    Topology t = face68_topology();
    CHECK(t.num_landmarks == 68);
    CHECK(t.num_parts() == 10);
    CHECK(t.part_names[t.root] == "nose");
    for (int k = 0; k < 68; ++k) CHECK(t.landmark_mirror[t.landmark_mirror[k]] == k);
    Topology f = load_topology(std::string(HPM_DATA_DIR) + "/face68_topology.json");
    CHECK(topology_to_json(f) == topology_to_json(t));
    Topology lr = lowres7_topology();
    CHECK(lr.num_parts() == 7);
    Topology g = load_topology(std::string(HPM_DATA_DIR) + "/lowres7_topology.json");
    CHECK(topology_to_json(g) == topology_to_json(lr));

    nlohmann::json bad = topology_to_json(t);
    bad["parts"][1]["parent"] = nullptr;
    CHECK_THROWS_AS(topology_from_json(bad), ConfigError);
}
