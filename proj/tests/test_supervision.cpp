#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <Eigen/Dense>

#include "hpm/model.hpp"
#include "hpm/supervision.hpp"
#include "hpm/synthetic.hpp"

using namespace hpm;

namespace {

std::vector<Point> random_shape(Rng& rng, int n) {
    std::vector<Point> p(n);
    for (auto& q : p) q = {rng.normal() * 10, rng.normal() * 10};
    return p;
}

std::vector<Point> transform(const std::vector<Point>& p, const Similarity& t) {
    std::vector<Point> r;
    for (const auto& q : p) {
        auto v = t.apply(q.x, q.y);
        r.push_back({v[0], v[1]});
    }
    return r;
}

// Umeyama's SVD construction.
Similarity umeyama(const std::vector<Point>& a, const std::vector<Point>& b) {
    const int n = int(a.size());
    Eigen::Matrix2Xd A(2, n), B(2, n);
    for (int i = 0; i < n; ++i) A.col(i) << a[i].x, a[i].y, B.col(i) << b[i].x, b[i].y;
    Eigen::Vector2d ma = A.rowwise().mean(), mb = B.rowwise().mean();
    A.colwise() -= ma;
    B.colwise() -= mb;
    Eigen::Matrix2d cov = B * A.transpose() / n;
    Eigen::JacobiSVD<Eigen::Matrix2d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix2d S = Eigen::Matrix2d::Identity();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) S(1, 1) = -1;
    Eigen::Matrix2d R = svd.matrixU() * S * svd.matrixV().transpose();
    double var_a = A.squaredNorm() / n;
    double c = (svd.singularValues().asDiagonal() * S).trace() / var_a;
    Eigen::Vector2d t = mb - c * R * ma;
    return {c * R(0, 0), c * R(1, 0), t(0), t(1)};
}

std::vector<Point> jitter(Rng& rng, std::vector<Point> p, double eps) {
    for (auto& q : p) q.x += eps * rng.normal(), q.y += eps * rng.normal();
    return p;
}

}  // namespace

TEST_CASE("procrustes alignment") {
    Rng rng(41);
    auto a = random_shape(rng, 12);
    auto id = procrustes_align(a, a);
    CHECK(id.transform.a == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::fabs(id.transform.b) <= 1e-12);
    CHECK(std::fabs(id.transform.tx) <= 1e-9);
    CHECK(id.residual <= 1e-9);

    const double th = 30 * M_PI / 180;
    Similarity fwd{2 * std::cos(th), 2 * std::sin(th), 5, -3};
    auto b = transform(a, fwd);
    auto r = procrustes_align(b, a);
    CHECK(r.residual <= 1e-9);
    auto comp = r.transform.compose(fwd);
    CHECK(std::fabs(comp.a - 1) <= 1e-9);
    CHECK(std::fabs(comp.b) <= 1e-9);
    CHECK(std::fabs(comp.tx) <= 1e-9);
    CHECK(std::fabs(comp.ty) <= 1e-9);

    for (int trial = 0; trial < 100; ++trial) {
        auto p = random_shape(rng, 3 + rng.uniform_int(30));
        auto q = random_shape(rng, int(p.size()));
        auto mine = procrustes_align(p, q).transform;
        auto oracle = umeyama(p, q);
        CHECK(std::fabs(mine.a - oracle.a) <= 1e-6);
        CHECK(std::fabs(mine.b - oracle.b) <= 1e-6);
        CHECK(std::fabs(mine.tx - oracle.tx) <= 1e-6);
        CHECK(std::fabs(mine.ty - oracle.ty) <= 1e-6);
    }

    std::vector<Point> same(5, Point{1, 2});
    CHECK_THROWS_AS(procrustes_align(same, a), DomainError);
    CHECK_THROWS_AS(procrustes_align({{0, 0}}, {{1, 1}}), DomainError);
    CHECK_THROWS_AS(procrustes_align(a, random_shape(rng, 5)), DomainError);
}

TEST_CASE("viewpoint assignment") {
    auto refs = default_reference_set(3);
    CHECK(refs.mirror_views == std::vector<std::pair<int, int>>{{0, 2}});
    for (const auto& s : refs.shapes) CHECK(assign_viewpoint(s.points, refs) == s.view);

    const auto& mir = face68_mirror();
    auto frontal = refs.shapes[1].points;
    CHECK(assign_viewpoint(mirror_points(frontal, mir), refs) == 1);
    CHECK(assign_viewpoint(mirror_points(refs.shapes[0].points, mir), refs) == 2);

    // Half the smallest residual between distinct references bounds the
    // perturbation that cannot change the label.
    double gap = 1e300;
    for (const auto& s : refs.shapes)
        for (const auto& t : refs.shapes)
            if (s.view != t.view) gap = std::min(gap, procrustes_align(s.points, t.points).residual);
    CHECK(gap > 0.5);
    Rng rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        const auto& ref = refs.shapes[size_t(rng.uniform_int(3))];
        double eps = rng.uniform(0, 0.15 * gap);
        auto p = jitter(rng, ref.points, eps);
        const double th = rng.uniform(-0.5, 0.5);
        p = transform(p, {3 * std::cos(th), 3 * std::sin(th), 100, 50});
        CHECK(assign_viewpoint(p, refs) == ref.view);
    }

    // Exact ties resolve to the lowest viewpoint.
    ReferenceShapeSet dup;
    dup.views = 2;
    dup.shapes = {{1, refs.shapes[1].points}, {0, refs.shapes[1].points}};
    CHECK(assign_viewpoint(refs.shapes[1].points, dup) == 0);
}

TEST_CASE("normalization removes in-plane rotation and scale") {
    auto refs = default_reference_set(3);
    Rng rng(43);
    for (int trial = 0; trial < 50; ++trial) {
        const auto& ref = refs.shapes[size_t(rng.uniform_int(3))];
        const double th = rng.uniform(-0.6, 0.6);
        auto p = transform(jitter(rng, ref.points, 0.5), {0.7 * std::cos(th), 0.7 * std::sin(th), 40, 80});
        auto n = normalize_example(p, refs);
        CHECK(n.view == ref.view);
        auto again = procrustes_align(n.points, refs.shapes[size_t(n.view)].points);
        CHECK(std::fabs(again.transform.b) <= 1e-9);
        CHECK(std::fabs(again.transform.a - 1) <= 1e-9);
        CHECK(std::fabs(interocular_distance(n.points) - 48) < 2.0);
    }
}

TEST_CASE("k-means on part shapes") {
    std::vector<std::vector<double>> same(5, {1.0, 2.0, -1.0, -2.0});
    auto r = cluster_part_shapes(same, 1, 7);
    CHECK(r.centers[0] == same[0]);
    CHECK(r.distortion == 0.0);

    Rng rng(44);
    std::vector<std::vector<double>> data;
    std::vector<int> truth;
    for (int i = 0; i < 60; ++i) {
        int g = i % 2;
        truth.push_back(g);
        data.push_back({g * 50 + rng.normal(), rng.normal(), -g * 50 + rng.normal()});
    }
    auto km = cluster_part_shapes(data, 2, 9);
    for (int i = 0; i < 60; ++i) CHECK((km.assignment[i] == km.assignment[0]) == (truth[i] == truth[0]));
    auto km2 = cluster_part_shapes(data, 2, 9);
    CHECK(km2.assignment == km.assignment);
    CHECK_THROWS_AS(cluster_part_shapes(std::vector<std::vector<double>>(2, {1.0}), 3, 1), DataError);
}

TEST_CASE("quadrant occlusion masks") {
    std::vector<Point> layout = {{0, 0}, {1, 0}, {0, 1}, {1, 1}, {0.5, 0.5}};
    auto none = quadrant_mask(layout, 0.0, 0.0, 0);
    CHECK(std::count(none.begin(), none.end(), 1) == 0);
    // A cut at the far corner covers the box; points on its far edges stay visible.
    auto all = quadrant_mask(layout, 1.0, 1.0, 0);
    CHECK(all == std::vector<char>{1, 0, 0, 0, 1});
    auto slightly = quadrant_mask(layout, 1.0 + 1e-9, 1.0 + 1e-9, 0);
    CHECK(std::count(slightly.begin(), slightly.end(), 1) == 5);
    CHECK(quadrant_mask(layout, 0.7, 0.7, 3) == std::vector<char>{0, 0, 0, 1, 0});
}

TEST_CASE("sampled masks follow the exact quadrant distribution") {
    auto layout = default_reference_set(1).shapes[0].points;
    // Exact distribution: the mask is constant on each cell of the grid formed
    // by the sorted landmark coordinates.
    std::vector<double> xs, ys;
    for (const auto& p : layout) xs.push_back(p.x), ys.push_back(p.y);
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
    const double W = xs.back() - xs.front(), H = ys.back() - ys.front();
    std::map<std::vector<char>, double> exact;
    for (size_t i = 0; i + 1 < xs.size(); ++i)
        for (size_t j = 0; j + 1 < ys.size(); ++j) {
            double a = 0.5 * (xs[i] + xs[i + 1]), b = 0.5 * (ys[j] + ys[j + 1]);
            double p = (xs[i + 1] - xs[i]) / W * (ys[j + 1] - ys[j]) / H / 4;
            for (int q = 0; q < 4; ++q) exact[quadrant_mask(layout, a, b, q)] += p;
        }
    Rng rng(45);
    const int n = 10000;
    std::map<std::vector<char>, int> seen;
    for (int i = 0; i < n; ++i) ++seen[sample_quadrant_occlusion(layout, rng)];
    int violations = 0, outside3 = 0;
    for (const auto& [m, c] : seen) {
        if (!exact.count(m)) ++violations;
    }
    for (const auto& [m, p] : exact) {
        const int c = seen.count(m) ? seen[m] : 0;
        const double sd = std::sqrt(n * p * (1 - p));
        if (std::fabs(c - n * p) > 3 * sd + 1) ++outside3;
        CHECK(std::fabs(c - n * p) <= 5 * sd + 1);
    }
    CHECK(violations == 0);
    // Hundreds of cells are tested at once; a 3-sigma miss rate near 0.3% is expected.
    CHECK(outside3 <= std::max<int>(2, int(exact.size() / 100)));
    double total = 0;
    for (const auto& [m, p] : exact) total += p;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("virtual positives") {
    auto refs = default_reference_set(1);
    SupervisedExample ex;
    ex.landmarks = refs.shapes[0].points;
    ex.occluded.assign(68, 0);
    Rng rng(46);
    auto only = generate_virtual_positives(ex, 0, rng);
    REQUIRE(only.size() == 1);
    CHECK(only[0].landmarks == ex.landmarks);
    auto v = generate_virtual_positives(ex, 8, rng);
    REQUIRE(v.size() == 9);
    for (int i = 0; i < 9; ++i) {
        CHECK(v[i].variant == i);
        CHECK(v[i].landmarks == ex.landmarks);
    }
}

TEST_CASE("occlusion pattern clustering") {
    auto lib = cluster_occlusion_patterns(std::vector<uint64_t>(20, 0), 4, 4, 1);
    CHECK(lib.patterns.size() == 4);
    CHECK(lib.patterns[0] == 0);
    CHECK(std::set<uint64_t>(lib.patterns.begin(), lib.patterns.end()) == std::set<uint64_t>{0, 0b1111});
    for (int a : lib.assignment) CHECK(a == 0);

    Rng rng(47);
    const std::vector<uint64_t> planted = {0b000000, 0b111111, 0b000111, 0b111000};
    std::vector<uint64_t> masks;
    for (int i = 0; i < 400; ++i) {
        uint64_t m = planted[i % 4];
        if (rng.uniform() < 0.2) m ^= 1ull << rng.uniform_int(6);
        masks.push_back(m);
    }
    auto l2 = cluster_occlusion_patterns(masks, 6, 4, 3);
    CHECK(std::set<uint64_t>(l2.patterns.begin(), l2.patterns.end()) ==
          std::set<uint64_t>(planted.begin(), planted.end()));
    CHECK(l2.patterns[0] == 0);
    for (size_t i = 0; i < masks.size(); ++i)
        if (masks[i] == planted[i % 4]) CHECK(l2.patterns[l2.assignment[i]] == planted[i % 4]);

    // A one-landmark part has only two distinct patterns.
    auto l3 = cluster_occlusion_patterns({0, 1, 1, 0}, 1, 4, 1);
    CHECK(l3.patterns.size() == 4);
    CHECK(l3.patterns[0] == 0);
    CHECK(std::count(l3.patterns.begin(), l3.patterns.end(), 1ull) == 1);
}

namespace {

DatasetManifest toy_manifest(int n, Rng& rng, const ReferenceShapeSet& refs) {
    DatasetManifest m;
    for (int i = 0; i < n; ++i) {
        AnnotatedFace f;
        f.image = "img" + std::to_string(i) + ".png";
        const auto& ref = refs.shapes[size_t(i % refs.views)].points;
        const double th = rng.uniform(-0.3, 0.3), s = rng.uniform(0.8, 1.3);
        f.landmarks = transform(jitter(rng, ref, 1.5), {s * std::cos(th), s * std::sin(th), 120, 90});
        m.faces.push_back(f);
    }
    return m;
}

}  // namespace

TEST_CASE("supervision pipeline") {
    auto refs = default_reference_set(3);
    Rng rng(48);
    auto data = toy_manifest(12, rng, refs);
    SupervisionOptions opt;
    opt.seed = 5;
    auto s = supervise(data, face68_topology(), refs, opt);
    CHECK(s.examples.size() == 12 * 9);
    for (const auto& ex : s.examples) {
        CHECK(ex.view == ex.face % 3);
        for (int p = 0; p < 10; ++p) {
            const uint64_t m = s.patterns[p][ex.view][ex.part_occ[p]];
            const auto& lm = s.topology.part_landmarks[p];
            for (size_t i = 0; i < lm.size(); ++i) CHECK(bool(ex.occluded[lm[i]]) == bool((m >> i) & 1));
            CHECK(ex.part_shape[p] >= 0);
            CHECK(ex.part_shape[p] < 3);
        }
    }
    for (int p = 0; p < 10; ++p)
        for (int v = 0; v < 3; ++v) CHECK(s.patterns[p][v][0] == 0);
    // Mirrored views carry mirrored libraries.
    for (int p = 0; p < 10; ++p)
        for (int o = 0; o < 4; ++o)
            CHECK(s.patterns[p][2][o] == mirror_pattern(s.topology, p, s.patterns[s.topology.part_mirror[p]][0][o]));

    auto s2 = supervise(data, face68_topology(), refs, opt);
    CHECK(supervision_to_json(s).dump() == supervision_to_json(s2).dump());
    auto back = supervision_from_json(supervision_to_json(s));
    CHECK(supervision_to_json(back).dump() == supervision_to_json(s).dump());

    CHECK_THROWS_AS(supervise(DatasetManifest{}, face68_topology(), refs, opt), DataError);
    auto bad = data;
    bad.faces[3].landmarks.pop_back();
    CHECK_THROWS_WITH_AS(supervise(bad, face68_topology(), refs, opt), doctest::Contains("img3.png"), DataError);
    auto few = toy_manifest(3, rng, refs);
    CHECK_THROWS_WITH_AS(supervise(few, face68_topology(), refs, opt), doctest::Contains("lower"), DataError);

    auto lr = derive_lowres(s, lowres7_topology());
    CHECK(lr.examples.size() == s.examples.size());
    for (const auto& ex : lr.examples) {
        CHECK(ex.landmarks.size() == 7);
        for (int p = 0; p < 7; ++p) CHECK(ex.part_occ[p] == ex.occluded[p]);
    }
}
