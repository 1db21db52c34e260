#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>

#include "hpm/evaluation.hpp"
#include "hpm/synthetic.hpp"
#include "plant_model.hpp"

using namespace hpm;

namespace {

std::vector<Point> random_points(Rng& rng, int n, double spread = 50) {
    std::vector<Point> p(n);
    for (auto& q : p) q = {rng.uniform(-spread, spread), rng.uniform(-spread, spread)};
    return p;
}

std::vector<bool> random_flags(Rng& rng, int n, double p = 0.3) {
    std::vector<bool> f(n);
    for (int i = 0; i < n; ++i) f[i] = rng.uniform() < p;
    return f;
}

Detection det_box(double x, double y, double s, double score) {
    Detection d;
    d.score = score;
    d.box = {x, y, x + s, y + s};
    return d;
}

// Exhaustive matcher: walk detections by score and take the best free box per image.
std::vector<std::pair<long, long>> brute_force_pr(const std::vector<std::vector<Detection>>& dets,
                                                  const std::vector<std::vector<GroundTruthBox>>& gts) {
    std::vector<std::tuple<double, size_t, size_t>> all;
    for (size_t i = 0; i < dets.size(); ++i)
        for (size_t j = 0; j < dets[i].size(); ++j) all.emplace_back(dets[i][j].score, i, j);
    std::stable_sort(all.begin(), all.end(), [](auto& a, auto& b) { return std::get<0>(a) > std::get<0>(b); });
    std::vector<std::vector<bool>> used(gts.size());
    for (size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].size(), false);
    std::vector<std::pair<long, long>> out;
    long tp = 0, fp = 0;
    for (size_t k = 0; k < all.size(); ++k) {
        auto [s, i, j] = all[k];
        double bv = -1;
        int bg = -1;
        for (size_t g = 0; g < gts[i].size(); ++g) {
            double v = iou(dets[i][j].box, gts[i][g].box);
            if (!used[i][g] && v >= 0.5 && v > bv) bv = v, bg = int(g);
        }
        if (bg >= 0) used[i][bg] = true, ++tp;
        else ++fp;
        if (k + 1 == all.size() || std::get<0>(all[k + 1]) != s) out.emplace_back(tp, fp);
    }
    return out;
}

std::string temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("hpm_test_eval_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

}  // namespace

TEST_CASE("ridge landmark map") {
    Rng rng(1);
    const Topology t = face68_topology();
    const int n = 120;
    std::vector<std::vector<Point>> preds(n), gts(n), doubled(n);
    for (int i = 0; i < n; ++i) {
        preds[i] = random_points(rng, 68);
        gts[i] = preds[i];
        doubled[i] = preds[i];
        for (auto& p : doubled[i]) p = {2 * p.x, 2 * p.y};
    }
    auto id = fit_landmark_map(preds, gts, 0.0, t.landmark_part, t.landmark_part);
    CHECK((id.beta - Eigen::MatrixXd::Identity(136, 136)).cwiseAbs().maxCoeff() <= 1e-6);
    auto pts = id.apply(preds[3]);
    for (int k = 0; k < 68; ++k) CHECK(pts[k].x == doctest::Approx(preds[3][k].x).epsilon(1e-9));
    auto two = fit_landmark_map(preds, doubled, 1e-12, t.landmark_part, t.landmark_part);
    CHECK((two.beta - 2 * Eigen::MatrixXd::Identity(136, 136)).cwiseAbs().maxCoeff() <= 1e-6);

    // Masked linear ground truth onto 20 targets, compared with an SVD least-squares oracle.
    std::vector<int> tblock(20);
    for (int p = 0; p < 20; ++p) tblock[p] = p % t.num_parts();
    Eigen::MatrixXd truth = Eigen::MatrixXd::Zero(136, 40);
    for (int p = 0; p < 20; ++p)
        for (int k = 0; k < 68; ++k)
            if (t.landmark_part[k] == tblock[p])
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) truth(2 * k + a, 2 * p + b) = rng.normal() * 0.3;
    std::vector<std::vector<Point>> target(n);
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd x(136);
        for (int k = 0; k < 68; ++k) x[2 * k] = preds[i][k].x, x[2 * k + 1] = preds[i][k].y;
        Eigen::VectorXd y = truth.transpose() * x;
        target[i].resize(20);
        for (int p = 0; p < 20; ++p) target[i][p] = {y[2 * p] + 0.1 * rng.normal(), y[2 * p + 1] + 0.1 * rng.normal()};
    }
    const double lambda = 3.0;
    auto fit = fit_landmark_map(preds, target, lambda, t.landmark_part, tblock);
    for (int p = 0; p < 20; ++p) {
        std::vector<int> src;
        for (int k = 0; k < 68; ++k)
            if (t.landmark_part[k] == tblock[p]) src.push_back(k);
        const int d = 2 * int(src.size());
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n + d, d);
        Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(n + d, 2);
        for (int i = 0; i < n; ++i) {
            for (size_t j = 0; j < src.size(); ++j) A(i, 2 * j) = preds[i][src[j]].x, A(i, 2 * j + 1) = preds[i][src[j]].y;
            Y(i, 0) = target[i][p].x, Y(i, 1) = target[i][p].y;
        }
        A.bottomRows(d) = std::sqrt(lambda) * Eigen::MatrixXd::Identity(d, d);
        Eigen::MatrixXd B = A.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(Y);
        for (size_t j = 0; j < src.size(); ++j)
            for (int c = 0; c < 2; ++c) {
                CHECK(fit.beta(2 * src[j], 2 * p + c) == doctest::Approx(B(2 * j, c)).epsilon(1e-6));
                CHECK(fit.beta(2 * src[j] + 1, 2 * p + c) == doctest::Approx(B(2 * j + 1, c)).epsilon(1e-6));
            }
        for (int k = 0; k < 68; ++k)
            if (t.landmark_part[k] != tblock[p])
                for (int a = 0; a < 2; ++a)
                    for (int c = 0; c < 2; ++c) CHECK(fit.beta(2 * k + a, 2 * p + c) == 0.0);
    }

    // Identical inputs make every block singular.
    std::vector<std::vector<Point>> same(n, preds[0]);
    CHECK_THROWS_AS(fit_landmark_map(same, same, 0.0, t.landmark_part, t.landmark_part), DomainError);
    CHECK_NOTHROW(fit_landmark_map(same, same, 1.0, t.landmark_part, t.landmark_part));
    CHECK_THROWS_AS(fit_landmark_map(preds, gts, -1.0, t.landmark_part, t.landmark_part), DomainError);
}

TEST_CASE("occlusion transfer") {
    Rng rng(2);
    auto src = random_points(rng, 68), dst = random_points(rng, 29);
    auto corr = occlusion_correspondence(src, dst);
    for (size_t p = 0; p < dst.size(); ++p)
        for (size_t k = 0; k < src.size(); ++k)
            CHECK(std::hypot(src[corr[p]].x - dst[p].x, src[corr[p]].y - dst[p].y) <=
                  std::hypot(src[k].x - dst[p].x, src[k].y - dst[p].y));
    CHECK(transfer_occlusion(std::vector<bool>(68, false), corr) == std::vector<bool>(29, false));
    CHECK(transfer_occlusion(std::vector<bool>(68, true), corr) == std::vector<bool>(29, true));
    for (int t = 0; t < 50; ++t) {
        auto f = random_flags(rng, 68);
        auto g = transfer_occlusion(f, corr);
        for (size_t p = 0; p < corr.size(); ++p) CHECK(g[p] == f[corr[p]]);
    }
    CHECK_THROWS_AS(transfer_occlusion({true}, {3}), DomainError);
}

TEST_CASE("localization metrics") {
    Rng rng(3);
    const auto eyes = EyeIndices::face68();
    auto face = project_face(mean_face68_3d(), 0, 50);
    auto r = localization_metrics({face}, {face}, eyes);
    CHECK(r.mean_error == 0);
    CHECK(r.success_rate == 1);
    CHECK(eye_distance(face, eyes) == doctest::Approx(50));

    // Exactly 0.1 IPD everywhere counts as a success.
    std::vector<Point> gt(68), pred(68);
    for (int k = 0; k < 68; ++k) gt[k] = {double(k), 0};
    for (int k = 36; k < 42; ++k) gt[k] = {0, 0};
    for (int k = 42; k < 48; ++k) gt[k] = {50, 0};
    for (int k = 0; k < 68; ++k) pred[k] = {gt[k].x + 5, gt[k].y};
    r = localization_metrics({pred}, {gt}, eyes);
    CHECK(r.mean_error == 0.1);
    CHECK(r.success_rate == 1);

    std::vector<std::vector<Point>> ps, gs;
    for (int i = 0; i < 40; ++i) {
        auto g = project_face(mean_face68_3d(), rng.uniform(-30, 30), rng.uniform(30, 90));
        auto p = g;
        for (auto& q : p) q = {q.x + rng.normal() * 4, q.y + rng.normal() * 4};
        ps.push_back(p);
        gs.push_back(g);
    }
    std::vector<bool> found(40, true);
    found[7] = false;
    r = localization_metrics(ps, gs, eyes, 0.1, found);
    double sum = 0;
    int ok = 0;
    for (int i = 0; i < 40; ++i) {
        if (i == 7) continue;
        double lx = 0, ly = 0, rx = 0, ry = 0;
        for (int k = 36; k < 42; ++k) lx += gs[i][k].x, ly += gs[i][k].y;
        for (int k = 42; k < 48; ++k) rx += gs[i][k].x, ry += gs[i][k].y;
        const double ipd = std::sqrt((lx - rx) * (lx - rx) + (ly - ry) * (ly - ry)) / 6;
        double e = 0;
        for (int k = 0; k < 68; ++k)
            e += std::sqrt((ps[i][k].x - gs[i][k].x) * (ps[i][k].x - gs[i][k].x) +
                           (ps[i][k].y - gs[i][k].y) * (ps[i][k].y - gs[i][k].y));
        e = e / 68 / ipd;
        sum += e;
        ok += e <= 0.1;
    }
    CHECK(std::fabs(r.mean_error - sum / 39) <= 1e-12);
    CHECK(r.missing == 1);
    CHECK(r.success_rate == doctest::Approx(ok / 40.0));
    REQUIRE(r.ced.size() == 61);
    CHECK(r.ced.front().first == 0.0);
    CHECK(r.ced.back().first == doctest::Approx(0.3));
    for (size_t i = 1; i < r.ced.size(); ++i) CHECK(r.ced[i].second >= r.ced[i - 1].second);
    CHECK(r.ced[20].first == doctest::Approx(0.1));
    CHECK(r.ced[20].second == r.success_rate);
    CHECK_THROWS_AS(localization_metrics(ps, {gs[0]}, eyes), DomainError);
}

TEST_CASE("occlusion precision and recall") {
    Rng rng(4);
    auto g = random_flags(rng, 68);
    auto r = occlusion_pr(g, g);
    if (std::count(g.begin(), g.end(), true) > 0) {
        CHECK(r.precision == 1);
        CHECK(r.recall == 1);
    }
    r = occlusion_pr(std::vector<bool>(68, false), g);
    CHECK(r.precision == 1);
    CHECK(r.recall == 0);
    for (int t = 0; t < 100; ++t) {
        auto p = random_flags(rng, 68), q = random_flags(rng, 68);
        long tp = 0, fp = 0, fn = 0;
        for (int k = 0; k < 68; ++k) {
            tp += p[k] && q[k];
            fp += p[k] && !q[k];
            fn += !p[k] && q[k];
        }
        auto x = occlusion_pr(p, q);
        CHECK(x.tp == tp);
        CHECK(x.fp == fp);
        CHECK(x.fn == fn);
        if (tp + fp) CHECK(x.precision == double(tp) / (tp + fp));
        if (tp + fn) CHECK(x.recall == double(tp) / (tp + fn));
    }
}

TEST_CASE("occluded-state bias perturbation") {
    Rng rng(5);
    RandomModelOptions o;
    o.neg_inf_bias_prob = 0.1;
    Model m = random_model(rng, o);
    for (auto& part : m.spec.states.patterns) part[0][1] = 0b111;
    Model same = perturb_occlusion_biases(m, 0.0);
    CHECK(same.w == m.w);
    Model p = perturb_occlusion_biases(m, 1.5);
    const auto& L = m.layout;
    for (size_t i = 0; i < m.w.size(); ++i) {
        bool is_occ_bias = false;
        for (int k = 0; k < m.spec.topology.num_landmarks; ++k)
            for (int s = 0; s < m.spec.states.shape_states(); ++s)
                for (int oo = 0; oo < m.spec.states.occlusions; ++oo)
                    if (L.landmark_bias(k, s, oo) == i && m.spec.landmark_occluded(k, s, oo)) is_occ_bias = true;
        if (!is_occ_bias || is_neg_inf(m.w[i])) CHECK(p.w[i] == m.w[i]);
        else CHECK(p.w[i] == m.w[i] + std::fabs(m.w[i]) * 1.5);
    }
    // A huge offset makes the fully occluded state win wherever it is allowed.
    Model big = perturb_occlusion_biases(m, 1e3);
    auto level = random_level(rng, 8, 8);
    auto r = infer(big, level);
    REQUIRE(r.feasible);
    int occluded = 0;
    for (int k = 0; k < big.spec.topology.num_landmarks; ++k) {
        const auto& n = r.best.landmarks[k];
        occluded += big.spec.landmark_occluded(k, n.shape, n.occ);
    }
    CHECK(occluded > 0);
}

TEST_CASE("detection precision and recall") {
    std::vector<std::vector<GroundTruthBox>> gts = {{{{0, 0, 10, 10}, false}}, {{{20, 20, 40, 40}, true}}};
    std::vector<std::vector<Detection>> perfect = {{det_box(0, 0, 10, 0.9)}, {det_box(20, 20, 20, 0.8)}};
    auto r = detection_pr(perfect, gts);
    REQUIRE(!r.all.empty());
    CHECK(r.all.back().precision == 1);
    CHECK(r.all.back().recall == 1);
    CHECK(r.occluded.back().precision == 1);
    CHECK(r.occluded.back().recall == 1);
    CHECK(r.ap == doctest::Approx(1.0));

    auto none = detection_pr({{}}, {{{{0, 0, 10, 10}, false}}});
    CHECK(none.all.empty());
    CHECK(none.ap == 0);
    CHECK(none.positives == 1);

    // Precision_o counts every false positive.
    std::vector<std::vector<Detection>> mixed = {{det_box(50, 50, 10, 0.95)}, {det_box(20, 20, 20, 0.8)}};
    auto m = detection_pr(mixed, gts);
    CHECK(m.occluded.back().tp == 1);
    CHECK(m.occluded.back().fp == 1);
    CHECK(m.occluded.back().precision == 0.5);

    Rng rng(6);
    for (int t = 0; t < 100; ++t) {
        const int n = 1 + rng.uniform_int(5);
        std::vector<std::vector<Detection>> ds(n);
        std::vector<std::vector<GroundTruthBox>> gs(n);
        for (int i = 0; i < n; ++i) {
            const int ng = rng.uniform_int(3);
            for (int g = 0; g < ng; ++g) {
                double x = rng.uniform(0, 60), y = rng.uniform(0, 60), s = rng.uniform(10, 30);
                gs[i].push_back({{x, y, x + s, y + s}, rng.uniform() < 0.5});
                if (rng.uniform() < 0.7)
                    ds[i].push_back(det_box(x + rng.uniform(-4, 4), y + rng.uniform(-4, 4), s * rng.uniform(0.8, 1.2),
                                            double(rng.uniform_int(10))));
            }
            const int nf = rng.uniform_int(3);
            for (int f = 0; f < nf; ++f)
                ds[i].push_back(det_box(rng.uniform(0, 80), rng.uniform(0, 80), rng.uniform(5, 30),
                                        double(rng.uniform_int(10))));
        }
        auto got = detection_pr(ds, gs);
        auto want = brute_force_pr(ds, gs);
        REQUIRE(got.all.size() == want.size());
        for (size_t k = 0; k < want.size(); ++k) {
            CHECK(got.all[k].tp == want[k].first);
            CHECK(got.all[k].fp == want[k].second);
            CHECK(got.all[k].precision * double(got.all[k].tp + got.all[k].fp) == double(got.all[k].tp));
            if (k) CHECK(got.all[k].recall >= got.all[k - 1].recall);
        }
    }
}

TEST_CASE("average precision of a step curve") {
    std::vector<PRPoint> c(3);
    c[0].precision = 1, c[0].recall = 0.5;
    c[1].precision = 0.5, c[1].recall = 0.5;
    c[2].precision = 0.75, c[2].recall = 1.0;
    CHECK(average_precision(c, 2) == doctest::Approx(0.5 * 1 + 0.5 * 0.75));
    CHECK(average_precision({}, 2) == 0);
}

TEST_CASE("report files") {
    auto svg = svg_plot("CED <test>", "error", "fraction", {{"a", {{0, 0}, {0.1, 0.5}, {0.3, 1}}}, {"b", {}}}, 0.3);
    CHECK(svg.find("<svg") == 0);
    CHECK(svg.find("polyline") != std::string::npos);
    CHECK(svg.find("&lt;test&gt;") != std::string::npos);
    CHECK(svg.find("href") == std::string::npos);
    CHECK(csv_table({"x", "y"}, {{1, 2}, {3.5, 4}}) == "x,y\n1,2\n3.5,4\n");
}

TEST_CASE("overlay colours") {
    Image img(40, 40, 1, 0.5f);
    Detection d;
    d.box = {5, 5, 35, 35};
    d.landmarks = {{10, 10}, {30, 30}};
    d.occluded = {false, true};
    Image o = render_overlay(img, d);
    REQUIRE(o.channels == 3);
    CHECK(o.at(10, 10, 0) == 0.f);
    CHECK(o.at(10, 10, 1) == 1.f);
    CHECK(o.at(30, 30, 0) == 1.f);
    CHECK(o.at(30, 30, 1) == 0.f);
    CHECK(o.at(5, 20, 2) == 1.f);
    CHECK(o.at(20, 20, 0) == 0.5f);
    Image again = render_overlay(img, d);
    CHECK(again.data == o.data);
}

TEST_CASE("alpha sweep reuses the unperturbed model at zero") {
    const std::string dir = temp_dir("sweep");
    PlantedOptions po = testing::plain_plant_options();
    po.seed = 12;
    po.occluder_rate = 0.5;
    auto data = write_planted_dataset(dir, po, 0, 4, 0);
    // Give the template model a second, fully occluded state per part.
    Model base = testing::template_model(3);
    ModelSpec spec = base.spec;
    spec.states.occlusions = 2;
    for (int p = 0; p < spec.topology.num_parts(); ++p)
        spec.states.patterns[p][0] = {0, (1ull << spec.topology.part_landmarks[p].size()) - 1};
    Model m(spec, 0.05);
    for (int k = 0; k < spec.topology.num_landmarks; ++k) {
        std::copy(base.appearance(k, 0), base.appearance(k, 0) + base.layout.template_size(),
                  m.w.begin() + m.layout.appearance(k, 0));
        m.w[m.layout.landmark_bias(k, 0, 1)] = -0.2;
    }
    Detector d{{m}};
    DetectOptions o;
    o.pyramid.rotations = {0};
    o.pyramid.upsample = false;
    o.pyramid.levels_per_octave = 1;
    auto faces = eval_faces(data.test);
    auto pts = occlusion_sweep(d, faces, {0.0, 2.0, 1e3}, o, EyeIndices::face68());
    REQUIRE(pts.size() == 3);
    for (size_t i = 0; i < faces.size(); ++i) {
        Detection ref = localize_in_box(d, load_image(faces[i].image), faces[i].box, o);
        REQUIRE(pts[0].found[i]);
        CHECK(pts[0].detections[i].occluded == ref.occluded);
        CHECK(pts[0].detections[i].score == ref.score);
    }
    CHECK(pts[2].pr.recall >= pts[0].pr.recall);
    CHECK(pts[2].pr.recall == 1.0);
    std::filesystem::remove_all(dir);
}
