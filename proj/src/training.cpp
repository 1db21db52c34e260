#include "hpm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "hpm/inference.hpp"
#include "hpm/parallel.hpp"

namespace hpm {

namespace {

double half_sqnorm(const std::vector<double>& w) {
    double s = 0;
    for (double v : w)
        if (!is_neg_inf(v)) s += v * v;
    return 0.5 * s;
}

// Largest violation per group, floored at zero.
std::map<int64_t, double> group_slacks(const std::vector<double>& w, const std::vector<Constraint>& cs) {
    std::map<int64_t, double> r;
    for (const auto& c : cs) {
        double g = c.margin - c.sign * c.x.dot(w);
        auto it = r.find(c.group);
        if (it == r.end()) r.emplace(c.group, std::max(0.0, g));
        else it->second = std::max(it->second, g);
    }
    return r;
}

}  // namespace

double svm_objective(const std::vector<double>& w, const std::vector<Constraint>& cs, double C) {
    double slack = 0;
    for (const auto& [g, v] : group_slacks(w, cs)) slack += v;
    return half_sqnorm(w) + C * slack;
}

SolverResult solve_svm(size_t dim, std::vector<Constraint>& cs, const SolverOptions& opt) {
    if (opt.C <= 0) throw DomainError("C must be positive");
    SolverResult res;
    res.w.assign(dim, 0.0);
    std::map<int64_t, std::vector<int>> by_group;
    for (int i = 0; i < int(cs.size()); ++i) {
        auto& c = cs[i];
        if (c.sqnorm < 0) c.sqnorm = c.x.squared_norm();
        c.alpha = std::clamp(c.alpha, 0.0, opt.C);
        by_group[c.group].push_back(i);
    }
    std::vector<std::vector<int>> groups;
    std::vector<double> used;
    for (auto& [g, members] : by_group) {
        double s = 0;
        for (int i : members) {
            // Rescale a warm start that overfills its group.
            s += cs[i].alpha;
        }
        if (s > opt.C)
            for (int i : members) cs[i].alpha *= opt.C / s;
        s = 0;
        for (int i : members) {
            s += cs[i].alpha;
            if (cs[i].alpha > 0) cs[i].x.add_to(res.w, cs[i].alpha * cs[i].sign);
        }
        groups.push_back(members);
        used.push_back(s);
    }

    auto gradient = [&](int i) { return cs[i].margin - cs[i].sign * cs[i].x.dot(res.w); };
    auto bounds = [&](double& primal, double& dual) {
        double hinge = 0, lin = 0;
        for (size_t g = 0; g < groups.size(); ++g) {
            double worst = 0;
            for (int i : groups[g]) {
                worst = std::max(worst, gradient(i));
                lin += cs[i].alpha * cs[i].margin;
            }
            hinge += worst;
        }
        const double q = half_sqnorm(res.w);
        primal = q + opt.C * hinge;
        dual = lin - q;
    };

    bounds(res.primal, res.dual);
    res.trace.push_back(res.primal);
    if (cs.empty()) return res;

    Rng rng(opt.seed);
    std::vector<int> order(groups.size());
    std::iota(order.begin(), order.end(), 0);
    for (int pass = 1; pass <= opt.max_passes; ++pass) {
        for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(int(i))]);
        for (int g : order) {
            auto& members = groups[g];
            double& S = used[g];
            for (int i : members) {
                auto& c = cs[i];
                const double G = gradient(i);
                const double cap = opt.C - (S - c.alpha);
                double a;
                if (c.sqnorm <= 0) a = G > 0 ? cap : 0.0;
                else a = std::clamp(c.alpha + G / c.sqnorm, 0.0, std::max(cap, 0.0));
                const double d = a - c.alpha;
                if (d == 0) continue;
                c.x.add_to(res.w, d * c.sign);
                c.alpha = a;
                S += d;
            }
            if (members.size() < 2) continue;
            // Exchange dual mass inside a saturated group.
            for (size_t it = 0; it < members.size(); ++it) {
                if (S < opt.C * (1 - 1e-12)) break;
                int bi = -1, bj = -1;
                double gi = -INFINITY, gj = INFINITY;
                for (int i : members) {
                    const double G = gradient(i);
                    if (G > gi) gi = G, bi = i;
                    if (cs[i].alpha > 0 && G < gj) gj = G, bj = i;
                }
                if (bi < 0 || bj < 0 || bi == bj || gi - gj <= 1e-12) break;
                const double qij = cs[bi].sign * cs[bj].sign * dot(cs[bi].x, cs[bj].x);
                const double den = cs[bi].sqnorm + cs[bj].sqnorm - 2 * qij;
                double t = den <= 1e-15 ? cs[bj].alpha : std::min(cs[bj].alpha, (gi - gj) / den);
                if (t <= 0) break;
                cs[bi].x.add_to(res.w, t * cs[bi].sign);
                cs[bj].x.add_to(res.w, -t * cs[bj].sign);
                cs[bi].alpha += t;
                cs[bj].alpha -= t;
            }
        }
        bounds(res.primal, res.dual);
        res.trace.push_back(res.primal);
        res.passes = pass;
        if (res.primal - res.dual <= opt.tolerance * std::max(std::fabs(res.primal), 1e-12)) return res;
    }
    throw ConvergenceError("SVM solver did not reach the duality gap tolerance in " + std::to_string(opt.max_passes) +
                               " passes",
                           res.trace);
}

void project_springs(Model& m, double eps) {
    for (size_t i = m.layout.springs_begin(); i < m.layout.springs_end(); i += 4) {
        m.w[i + 2] = std::min(m.w[i + 2], -eps);
        m.w[i + 3] = std::min(m.w[i + 3], -eps);
    }
}

std::array<double, 2> CanonicalFrame::to_cell(const Point& p) const {
    const double px = scale * p.x + origin_x, py = scale * p.y + origin_y;
    const double h = (cell_size - 1) / 2.0;
    return {(px - h) / cell_size - 1, (py - h) / cell_size - 1};
}

GridLoc CanonicalFrame::to_grid(const Point& p) const {
    auto c = to_cell(p);
    return {int(std::floor(c[1] + 0.5)), int(std::floor(c[0] + 0.5))};
}

Similarity CanonicalFrame::crop_transform(const Similarity& t) const {
    return {scale * t.a, scale * t.b, scale * t.tx + origin_x, scale * t.ty + origin_y};
}

CanonicalFrame canonical_frame(const Supervision& s, double scale, int cell_size, int margin_cells) {
    if (s.examples.empty()) throw DataError("no supervised examples");
    if (scale <= 0 || cell_size < 2) throw DomainError("bad canonical frame geometry");
    double x0 = INFINITY, y0 = INFINITY, x1 = -INFINITY, y1 = -INFINITY;
    for (const auto& ex : s.examples)
        for (const auto& p : ex.landmarks) {
            x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
            y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
        }
    CanonicalFrame f;
    f.scale = scale;
    f.cell_size = cell_size;
    const double h = (cell_size - 1) / 2.0;
    f.origin_x = (margin_cells + 1) * cell_size + h - scale * x0;
    f.origin_y = (margin_cells + 1) * cell_size + h - scale * y0;
    const int cols = int(std::ceil(scale * (x1 - x0) / cell_size)) + 1 + 2 * margin_cells;
    const int rows = int(std::ceil(scale * (y1 - y0) / cell_size)) + 1 + 2 * margin_cells;
    f.width = (cols + 2) * cell_size;
    f.height = (rows + 2) * cell_size;
    return f;
}

namespace {

std::array<double, 2> part_centroid(const Topology& t, int p, const SupervisedExample& ex, const CanonicalFrame& f) {
    double x = 0, y = 0;
    for (int k : t.part_landmarks[p]) {
        auto c = f.to_cell(ex.landmarks[k]);
        x += c[0], y += c[1];
    }
    const double n = double(t.part_landmarks[p].size());
    return {x / n, y / n};
}

GridLoc round_loc(std::array<double, 2> c) { return {int(std::floor(c[1] + 0.5)), int(std::floor(c[0] + 0.5))}; }

Offset rounded_mean(double sy, double sx, int n) {
    return {int(std::floor(sy / n + 0.5)), int(std::floor(sx / n + 0.5))};
}

}  // namespace

ModelSpec build_model_spec(const Supervision& s, const CanonicalFrame& frame, const ComponentSpec& c) {
    const auto& t = s.topology;
    ModelSpec spec;
    spec.mixture = c.mixture;
    spec.topology = t;
    spec.states.views = s.views;
    spec.states.shapes = s.shapes;
    spec.states.occlusions = s.occlusions;
    spec.states.patterns = s.patterns;
    spec.states.mirror_views = s.mirror_views;
    spec.cell_size = c.cell_size;
    spec.template_rows = spec.template_cols = c.template_size;
    spec.feature_dim = kHogDim;
    const int SV = s.views * s.shapes;
    const int P = t.num_parts(), L = t.num_landmarks;

    // Sums per state plus a state-free fallback in the last slot.
    std::vector<std::vector<std::array<double, 3>>> ps(P, std::vector<std::array<double, 3>>(SV + 1, {0, 0, 0}));
    std::vector<std::vector<std::array<double, 3>>> ls(L, std::vector<std::array<double, 3>>(SV + 1, {0, 0, 0}));
    for (const auto& ex : s.examples) {
        if (ex.variant != 0) continue;
        std::vector<GridLoc> loc(P);
        for (int p = 0; p < P; ++p) loc[p] = round_loc(part_centroid(t, p, ex, frame));
        for (int p = 0; p < P; ++p) {
            const int st = ex.view * s.shapes + ex.part_shape[p];
            if (p != t.root) {
                const GridLoc par = loc[t.part_parent[p]];
                for (int slot : {st, SV}) {
                    ps[p][slot][0] += loc[p].y - par.y;
                    ps[p][slot][1] += loc[p].x - par.x;
                    ps[p][slot][2] += 1;
                }
            }
            for (int k : t.part_landmarks[p]) {
                const GridLoc g = frame.to_grid(ex.landmarks[k]);
                for (int slot : {st, SV}) {
                    ls[k][slot][0] += g.y - loc[p].y;
                    ls[k][slot][1] += g.x - loc[p].x;
                    ls[k][slot][2] += 1;
                }
            }
        }
    }
    auto anchor = [&](const std::vector<std::array<double, 3>>& acc, int st) {
        const auto& a = acc[st][2] > 0 ? acc[st] : acc[SV];
        if (a[2] == 0) return Offset{};
        return rounded_mean(a[0], a[1], int(a[2]));
    };
    spec.part_anchor.assign(P, std::vector<Offset>(SV));
    spec.landmark_anchor.assign(L, std::vector<Offset>(SV));
    for (int st = 0; st < SV; ++st) {
        for (int p = 0; p < P; ++p)
            if (p != t.root) spec.part_anchor[p][st] = anchor(ps[p], st);
        for (int k = 0; k < L; ++k) spec.landmark_anchor[k][st] = anchor(ls[k], st);
    }
    spec.validate();
    return spec;
}

Configuration example_configuration(const ModelSpec& spec, const Supervision& s, const SupervisedExample& ex,
                                    const CanonicalFrame& frame, int rows, int cols) {
    const auto& t = spec.topology;
    auto clamp_loc = [&](GridLoc g) {
        return GridLoc{std::clamp(g.y, 0, rows - 1), std::clamp(g.x, 0, cols - 1)};
    };
    Configuration c;
    c.parts.resize(t.num_parts());
    c.landmarks.resize(t.num_landmarks);
    for (int p = 0; p < t.num_parts(); ++p) {
        auto& n = c.parts[p];
        n.loc = clamp_loc(round_loc(part_centroid(t, p, ex, frame)));
        n.shape = ex.view * s.shapes + ex.part_shape[p];
        n.occ = ex.part_occ[p];
    }
    for (int k = 0; k < t.num_landmarks; ++k) {
        const int p = t.landmark_part[k];
        auto& n = c.landmarks[k];
        n.shape = c.parts[p].shape;
        n.occ = c.parts[p].occ;
        if (spec.landmark_occluded(k, n.shape, n.occ)) {
            const Offset a = spec.landmark_anchor[k][n.shape];
            n.loc = clamp_loc({c.parts[p].loc.y + a.dy, c.parts[p].loc.x + a.dx});
        } else {
            n.loc = clamp_loc(frame.to_grid(ex.landmarks[k]));
        }
    }
    return c;
}

Constraint negative_constraint(FeatureVector x, double delta, double loss_margin, int64_t group) {
    Constraint k;
    k.x = std::move(x);
    k.sign = -1;
    k.margin = 1 - loss_margin * delta;
    k.delta = delta;
    k.group = group;
    return k;
}

bool mine_level(const Model& m, const FeatureLevel& level, double loss_margin, MinedNegative& out) {
    InferOptions io;
    io.loss_margin = loss_margin;
    InferenceResult r = infer(m, level, io);
    if (r.empty || !r.feasible) return false;
    out.config = r.best;
    out.augmented = r.score;
    out.delta = delta_occlusion(m.spec, r.best);
    return true;
}

namespace {

struct Component {
    const Supervision* sup = nullptr;
    CanonicalFrame frame;
    Model model;
    MirrorMap mirror;
    bool has_mirror = false;
    std::vector<char> fixed;
    size_t base = 0;
};

Model unpack(const Component& c, const std::vector<double>& w, double spring_min) {
    Model m = c.model;
    for (size_t i = 0; i < m.w.size(); ++i) m.w[i] = c.fixed[i] ? kNegInf : w[c.base + i];
    project_springs(m, spring_min);
    return c.has_mirror ? tie_mirror_parameters(m) : m;
}

FeatureVector solver_feature(const Component& c, const FeatureVector& f) {
    return shifted(c.has_mirror ? fold_mirror(f, c.mirror) : f, c.base);
}

// Replaces blocks whose contents match an earlier block at the same offset.
void share_blocks(FeatureVector& f, std::map<size_t, std::vector<std::shared_ptr<const std::vector<float>>>>& pool) {
    for (auto& b : f.blocks) {
        auto& cands = pool[b.offset];
        bool found = false;
        for (const auto& d : cands)
            if (*d == *b.data) {
                b.data = d;
                found = true;
                break;
            }
        if (!found) cands.push_back(b.data);
    }
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

}  // namespace

TrainingResult train(const Supervision& full, const Supervision* lowres, const std::vector<std::string>& negatives,
                     const TrainingOptions& opt) {
    if (opt.rounds < 1) throw ConfigError("rounds must be >= 1");
    if (opt.negatives_per_image < 0) throw ConfigError("negatives_per_image must be >= 0");
    if (opt.margin < 0) throw ConfigError("margin must be non-negative");
    if (full.examples.empty()) throw DataError("training needs at least one positive example");

    std::vector<Component> comps;
    auto add_component = [&](const Supervision& s, double scale, int cell, int tsize, const std::string& name) {
        Component c;
        c.sup = &s;
        c.frame = canonical_frame(s, scale, cell, tsize / 2 + 1);
        ComponentSpec cs{cell, tsize, scale, name};
        c.model = Model(build_model_spec(s, c.frame, cs), opt.spring_min);
        c.has_mirror = !c.model.spec.states.mirror_views.empty();
        if (c.has_mirror) {
            c.model = tie_mirror_parameters(c.model);
            c.mirror = mirror_map(c.model.spec);
        }
        c.fixed = fixed_mask(c.model);
        comps.push_back(std::move(c));
    };
    add_component(full, 1.0, opt.cell_size, opt.template_size, "full");
    if (opt.lowres) {
        if (!lowres) throw ConfigError("low-resolution training requested without low-resolution labels");
        add_component(*lowres, 0.5, opt.lowres_cell_size, opt.lowres_template_size, "lowres");
    }
    size_t dim = 0;
    for (auto& c : comps) {
        c.base = dim;
        dim += c.model.w.size();
    }

    // Positives: one constraint per supervised example and component.
    std::vector<Constraint> cs;
    for (size_t ci = 0; ci < comps.size(); ++ci) {
        const Component& c = comps[ci];
        const auto& ex = c.sup->examples;
        std::map<int, std::vector<int>> faces;
        for (int i = 0; i < int(ex.size()); ++i) faces[ex[i].face].push_back(i);
        std::vector<std::vector<int>> face_list;
        for (auto& [f, v] : faces) face_list.push_back(v);
        std::vector<std::vector<Constraint>> out(face_list.size());
        parallel_for(int(face_list.size()), opt.workers, [&](int fi) {
            const auto& idx = face_list[fi];
            Image img;
            try {
                img = load_image(ex[idx[0]].image);
            } catch (const std::exception& e) {
                throw DataError("cannot read positive image " + ex[idx[0]].image + ": " + e.what());
            }
            std::map<size_t, std::vector<std::shared_ptr<const std::vector<float>>>> pool;
            for (int i : idx) {
                Image crop = warp_similarity(img, c.frame.crop_transform(ex[i].transform), c.frame.width, c.frame.height);
                FeatureLevel level = compute_hog(crop, c.frame.cell_size);
                Configuration conf = example_configuration(c.model.spec, *c.sup, ex[i], c.frame, level.rows, level.cols);
                Constraint k;
                k.x = solver_feature(c, assemble_feature_vector(c.model, level, conf));
                share_blocks(k.x, pool);
                out[fi].push_back(std::move(k));
            }
        });
        for (auto& v : out)
            for (auto& k : v) {
                k.group = int64_t(cs.size());
                cs.push_back(std::move(k));
            }
    }
    const int64_t npos = int64_t(cs.size());
    const int64_t level_stride = 100000;

    TrainingResult result;
    for (auto& c : comps) result.detector.components.push_back(c.model);
    std::set<std::pair<int64_t, uint64_t>> seen;
    std::vector<double> w(dim, 0.0);
    for (const auto& c : comps)
        for (size_t i = 0; i < c.model.w.size(); ++i) w[c.base + i] = c.fixed[i] ? 0.0 : c.model.w[i];

    if (!opt.checkpoint_dir.empty()) ensure_dir(opt.checkpoint_dir);
    for (int round = 1; round <= opt.rounds; ++round) {
        // Mine loss-augmented violators with the current detector.
        const auto slack = group_slacks(w, cs);
        std::vector<std::vector<Constraint>> mined(negatives.size());
        parallel_for(int(negatives.size()), opt.workers, [&](int ii) {
            Image img;
            try {
                img = load_image(negatives[ii]);
            } catch (const std::exception& e) {
                throw DataError("cannot read negative image " + negatives[ii] + ": " + e.what());
            }
            struct Cand {
                double excess;
                Constraint c;
            };
            std::vector<Cand> cands;
            for (size_t ci = 0; ci < comps.size(); ++ci) {
                const Model& m = result.detector.components[ci];
                PyramidOptions po = opt.pyramid;
                po.cell_size = m.spec.cell_size;
                FeaturePyramid pyr = build_pyramid(img, po, 1);
                for (size_t li = 0; li < pyr.levels.size(); ++li) {
                    MinedNegative mn;
                    if (!mine_level(m, pyr.levels[li].features, opt.margin, mn)) continue;
                    const int64_t g = npos + (int64_t(ii) * int64_t(comps.size()) + int64_t(ci)) * level_stride + int64_t(li);
                    auto it = slack.find(g);
                    const double eta = it == slack.end() ? 0.0 : it->second;
                    const double excess = mn.augmented - (-1.0 + eta);
                    if (excess <= 1e-12) continue;
                    Constraint k = negative_constraint(
                        solver_feature(comps[ci], assemble_feature_vector(m, pyr.levels[li].features, mn.config)),
                        mn.delta, opt.margin, g);
                    cands.push_back({excess, std::move(k)});
                }
            }
            std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
                if (a.excess != b.excess) return a.excess > b.excess;
                return a.c.group < b.c.group;
            });
            for (auto& cd : cands) {
                if (int(mined[ii].size()) >= opt.negatives_per_image) break;
                mined[ii].push_back(std::move(cd.c));
            }
        });
        int added = 0;
        for (auto& v : mined)
            for (auto& k : v) {
                auto key = std::make_pair(k.group, k.x.hash());
                if (!seen.insert(key).second) continue;
                cs.push_back(std::move(k));
                ++added;
            }
        if (round > 1 && added == 0) break;

        SolverOptions so;
        so.C = opt.C;
        so.tolerance = opt.tolerance;
        so.max_passes = opt.max_passes;
        so.seed = opt.seed + uint64_t(round);
        SolverResult sr = solve_svm(dim, cs, so);
        w = sr.w;
        for (size_t ci = 0; ci < comps.size(); ++ci) result.detector.components[ci] = unpack(comps[ci], w, opt.spring_min);

        RoundLog rl;
        rl.round = round;
        rl.positives = int(npos);
        rl.negatives = int(cs.size() - size_t(npos));
        rl.new_constraints = added;
        rl.start_objective = sr.trace.front();
        rl.objective = sr.primal;
        rl.dual = sr.dual;
        rl.passes = sr.passes;
        result.log.push_back(rl);
        if (!opt.log_path.empty()) write_text_file(opt.log_path, training_log_csv(result.log));
        if (!opt.checkpoint_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof name, "round_%02d.json", round);
            save_detector(result.detector, (std::filesystem::path(opt.checkpoint_dir) / name).string());
        }

        // Drop inactive negatives that are strictly satisfied.
        const auto eta = group_slacks(w, cs);
        std::vector<Constraint> kept;
        kept.reserve(cs.size());
        for (auto& k : cs) {
            if (k.group >= npos && k.alpha == 0 && k.margin - k.sign * k.x.dot(w) < eta.at(k.group) - 1e-9) {
                seen.erase({k.group, k.x.hash()});
                continue;
            }
            kept.push_back(std::move(k));
        }
        cs = std::move(kept);
    }
    return result;
}

std::string training_log_csv(const std::vector<RoundLog>& log) {
    std::ostringstream os;
    os.precision(12);
    os << "round,positives,negatives,new_constraints,start_objective,objective,dual,passes\n";
    for (const auto& r : log)
        os << r.round << ',' << r.positives << ',' << r.negatives << ',' << r.new_constraints << ','
           << r.start_objective << ',' << r.objective << ',' << r.dual << ',' << r.passes << '\n';
    return os.str();
}

}  // namespace hpm
