#include "hpm/inference.hpp"

#include <algorithm>
#include <cmath>

#include "hpm/common.hpp"
#include "hpm/gdt.hpp"

namespace hpm {

UnaryResponses compute_unary_responses(const Model& m, const FeatureLevel& level) {
    const auto& spec = m.spec;
    if (level.dim != spec.feature_dim) throw DomainError("feature dimension does not match the model");
    UnaryResponses u;
    u.rows = level.rows;
    u.cols = level.cols;
    u.num_landmarks = spec.topology.num_landmarks;
    u.num_states = spec.states.shape_states();
    const int th = spec.template_rows, tw = spec.template_cols, D = level.dim;
    const size_t L = size_t(level.rows) * level.cols;
    const size_t tsize = m.layout.template_size();
    // im2col: one row per location holding its zero-padded patch.
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(Eigen::Index(L), Eigen::Index(tsize));
    for (int y = 0; y < level.rows; ++y) {
        for (int x = 0; x < level.cols; ++x) {
            const Eigen::Index row = Eigen::Index(size_t(y) * level.cols + x);
            for (int dy = 0; dy < th; ++dy) {
                const int yy = y - th / 2 + dy;
                if (yy < 0 || yy >= level.rows) continue;
                for (int dx = 0; dx < tw; ++dx) {
                    const int xx = x - tw / 2 + dx;
                    if (xx < 0 || xx >= level.cols) continue;
                    const float* c = level.cell(yy, xx);
                    const Eigen::Index col0 = Eigen::Index((size_t(dy) * tw + dx) * D);
                    for (int d = 0; d < D; ++d) P(row, col0 + d) = c[d];
                }
            }
        }
    }
    Eigen::Map<const Eigen::MatrixXd> T(m.w.data() + m.layout.appearance_begin(), Eigen::Index(tsize),
                                        Eigen::Index(u.num_landmarks) * u.num_states);
    u.values.noalias() = P * T;
    return u;
}

std::pair<int, int> model_extent(const ModelSpec& spec) {
    const auto& t = spec.topology;
    int best_r = 1 << 30, best_c = 1 << 30;
    for (int s = 0; s < spec.states.shape_states(); ++s) {
        std::vector<GridLoc> pos(t.num_parts());
        int y0 = 0, y1 = 0, x0 = 0, x1 = 0;
        for (int p : t.preorder) {
            if (p != t.root) {
                const GridLoc q = pos[t.part_parent[p]];
                pos[p] = {q.y + spec.part_anchor[p][s].dy, q.x + spec.part_anchor[p][s].dx};
            }
            y0 = std::min(y0, pos[p].y), y1 = std::max(y1, pos[p].y);
            x0 = std::min(x0, pos[p].x), x1 = std::max(x1, pos[p].x);
        }
        for (int k = 0; k < t.num_landmarks; ++k) {
            const GridLoc q = pos[t.landmark_part[k]];
            int y = q.y + spec.landmark_anchor[k][s].dy, x = q.x + spec.landmark_anchor[k][s].dx;
            y0 = std::min(y0, y), y1 = std::max(y1, y);
            x0 = std::min(x0, x), x1 = std::max(x1, x);
        }
        int r = y1 - y0 + 1, c = x1 - x0 + 1;
        if (long(r) * c < long(best_r) * best_c) best_r = r, best_c = c;
    }
    return {best_r, best_c};
}

namespace {

bool all_neg_inf(const double* g, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (!is_neg_inf(g[i])) return false;
    return true;
}

}  // namespace

MessageTables::MessageTables(const Model& m, const UnaryResponses& unary, const InferOptions& opt)
    : model_(&m), rows_(unary.rows), cols_(unary.cols), cells_(size_t(unary.rows) * unary.cols) {
    const auto& spec = m.spec;
    const auto& t = spec.topology;
    const int SV = spec.states.shape_states(), O = spec.states.occlusions;
    channels_ = SV * O;
    const size_t L = cells_;
    const double lm_penalty = opt.loss_margin / t.num_landmarks;
    if (unary.num_landmarks != t.num_landmarks || unary.num_states != SV)
        throw DomainError("unary responses do not match the model");

    acc_.assign(t.num_parts(), {});
    nu_arg_.assign(t.num_parts(), {});
    mu_arg_.assign(t.num_parts(), {});
    lm_arg_.assign(t.num_landmarks, {});
    for (auto& a : acc_) a.assign(size_t(channels_) * L, 0.0);

    detail::GdtWorkspace ws;
    std::vector<double> dt(L);
    std::vector<int> dt_arg(L);
    std::vector<char> dead(channels_);

    // Children before parents.
    for (auto it = t.preorder.rbegin(); it != t.preorder.rend(); ++it) {
        const int j = *it;
        std::vector<double>& acc = acc_[j];
        for (int k : t.part_landmarks[j]) {
            lm_arg_[k].assign(size_t(channels_) * L, -1);
            for (int s = 0; s < SV; ++s) {
                const auto w = m.landmark_spring(k, s);
                const Offset a = spec.landmark_anchor[k][s];
                for (int o = 0; o < O; ++o) {
                    const int c = s * O + o;
                    double* ac = acc.data() + size_t(c) * L;
                    const double b = m.w[m.layout.landmark_bias(k, s, o)];
                    const bool occluded = spec.landmark_occluded(k, s, o);
                    if (is_neg_inf(b)) {
                        std::fill(ac, ac + L, kNegInf);
                        continue;
                    }
                    if (occluded && opt.skip_occluded_transforms) {
                        const double msg = b - lm_penalty;
                        for (size_t i = 0; i < L; ++i) ac[i] = sat_add(ac[i], msg);
                        continue;
                    }
                    detail::gdt_grid(unary.grid(k, s), rows_, cols_, -w[0], w[2], -w[1], w[3], a.dx, a.dy,
                                     dt.data(), dt_arg.data(), ws);
                    ++stats_.landmark_transforms;
                    if (occluded) {
                        const double msg = b - lm_penalty;
                        for (size_t i = 0; i < L; ++i) ac[i] = sat_add(ac[i], msg);
                        continue;
                    }
                    int* arg = lm_arg_[k].data() + size_t(c) * L;
                    for (size_t i = 0; i < L; ++i) {
                        ac[i] = sat_add(ac[i], sat_add(dt[i], b));
                        arg[i] = dt_arg[i];
                    }
                }
            }
        }
        if (j == t.root) continue;

        // Transform each child channel once; the result is shared by all parent shapes.
        const int i = t.part_parent[j];
        std::vector<double> nu(size_t(channels_) * L, kNegInf);
        nu_arg_[j].assign(size_t(channels_) * L, -1);
        for (int c = 0; c < channels_; ++c) {
            const double* ac = acc.data() + size_t(c) * L;
            dead[c] = all_neg_inf(ac, L);
            if (dead[c]) continue;
            const int s = c / O;
            const auto w = m.part_spring(j, s);
            const Offset a = spec.part_anchor[j][s];
            detail::gdt_grid(ac, rows_, cols_, -w[0], w[2], -w[1], w[3], a.dx, a.dy, nu.data() + size_t(c) * L,
                             nu_arg_[j].data() + size_t(c) * L, ws);
            ++stats_.part_transforms;
        }
        mu_arg_[j].assign(size_t(channels_) * L, -1);
        std::vector<double> best(L);
        for (int ci = 0; ci < channels_; ++ci) {
            const int si = ci / O, oi = ci % O;
            double* pacc = acc_[i].data() + size_t(ci) * L;
            int* marg = mu_arg_[j].data() + size_t(ci) * L;
            std::fill(best.begin(), best.end(), kNegInf);
            for (int cj = 0; cj < channels_; ++cj) {
                if (dead[cj]) continue;
                const double b = m.w[m.layout.part_bias(j, si, cj / O, oi, cj % O)];
                if (is_neg_inf(b)) continue;
                const double* nv = nu.data() + size_t(cj) * L;
                const int* na = nu_arg_[j].data() + size_t(cj) * L;
                for (size_t l = 0; l < L; ++l) {
                    if (is_neg_inf(nv[l])) continue;
                    const double v = nv[l] + b;
                    if (marg[l] < 0 || v > best[l] ||
                        (v == best[l] && na[l] < nu_arg_[j][size_t(marg[l]) * L + l])) {
                        best[l] = v;
                        marg[l] = cj;
                    }
                }
            }
            for (size_t l = 0; l < L; ++l) pacc[l] = marg[l] < 0 ? kNegInf : sat_add(pacc[l], best[l]);
        }
    }

    const double w0 = m.w[m.layout.root_offset()];
    root_best_.assign(L, kNegInf);
    root_channel_.assign(L, -1);
    const auto& racc = acc_[t.root];
    for (int c = 0; c < channels_; ++c) {
        const double* ac = racc.data() + size_t(c) * L;
        for (size_t l = 0; l < L; ++l) {
            const double v = sat_add(w0, ac[l]);
            if (is_neg_inf(v)) continue;
            if (root_channel_[l] < 0 || v > root_best_[l]) {
                root_best_[l] = v;
                root_channel_[l] = c;
            }
        }
    }
}

Configuration MessageTables::backtrack(GridLoc root) const {
    const size_t l = size_t(root.y) * cols_ + root.x;
    if (root_channel_[l] < 0) throw DomainError("backtrack: no feasible state at this root location");
    return backtrack(root, root_channel_[l]);
}

Configuration MessageTables::backtrack(GridLoc root, int channel) const {
    const auto& spec = model_->spec;
    const auto& t = spec.topology;
    const int O = spec.states.occlusions;
    const size_t L = cells_;
    Configuration cfg;
    cfg.parts.resize(t.num_parts());
    cfg.landmarks.resize(t.num_landmarks);
    std::vector<int> chan(t.num_parts(), -1);
    chan[t.root] = channel;
    cfg.parts[t.root] = {root, channel / O, channel % O};
    for (int j : t.preorder) {
        if (j != t.root) {
            const int i = t.part_parent[j];
            const size_t li = size_t(cfg.parts[i].loc.y) * cols_ + cfg.parts[i].loc.x;
            const int cj = mu_arg_[j][size_t(chan[i]) * L + li];
            if (cj < 0) throw DomainError("backtrack: infeasible parent state");
            const int lj = nu_arg_[j][size_t(cj) * L + li];
            chan[j] = cj;
            cfg.parts[j] = {{lj / cols_, lj % cols_}, cj / O, cj % O};
        }
        const NodeState& pj = cfg.parts[j];
        const size_t lj = size_t(pj.loc.y) * cols_ + pj.loc.x;
        for (int k : t.part_landmarks[j]) {
            NodeState& n = cfg.landmarks[k];
            n.shape = pj.shape;
            n.occ = pj.occ;
            if (spec.landmark_occluded(k, pj.shape, pj.occ)) {
                const Offset a = spec.landmark_anchor[k][pj.shape];
                n.loc = {std::clamp(pj.loc.y + a.dy, 0, rows_ - 1), std::clamp(pj.loc.x + a.dx, 0, cols_ - 1)};
            } else {
                const int lk = lm_arg_[k][size_t(chan[j]) * L + lj];
                n.loc = {lk / cols_, lk % cols_};
            }
        }
    }
    return cfg;
}

InferenceResult infer_with_unary(const Model& m, const UnaryResponses& unary, const InferOptions& opt) {
    if (opt.loss_margin < 0) throw DomainError("loss margin must be >= 0");
    InferenceResult r;
    r.rows = unary.rows;
    r.cols = unary.cols;
    auto [er, ec] = model_extent(m.spec);
    if (unary.rows < er || unary.cols < ec) {
        r.empty = true;
        r.reason = "level smaller than model extent";
        return r;
    }
    MessageTables tables(m, unary, opt);
    r.stats = tables.stats();
    r.root_scores = tables.root_scores();
    int best = -1;
    for (size_t l = 0; l < r.root_scores.size(); ++l) {
        if (tables.root_channels()[l] < 0) continue;
        if (best < 0 || r.root_scores[l] > r.root_scores[size_t(best)]) best = int(l);
    }
    if (best < 0) {
        r.reason = "no feasible configuration";
        return r;
    }
    r.feasible = true;
    r.score = r.root_scores[size_t(best)];
    r.best = tables.backtrack({best / unary.cols, best % unary.cols});
    return r;
}

InferenceResult infer(const Model& m, const FeatureLevel& level, const InferOptions& opt) {
    auto [er, ec] = model_extent(m.spec);
    if (level.rows < er || level.cols < ec) {
        InferenceResult r;
        r.rows = level.rows;
        r.cols = level.cols;
        r.empty = true;
        r.reason = "level smaller than model extent";
        return r;
    }
    return infer_with_unary(m, compute_unary_responses(m, level), opt);
}

InferenceResult infer_naive(const Model& m, const FeatureLevel& level, double loss_margin, double limit) {
    const auto& spec = m.spec;
    const auto& t = spec.topology;
    const int SV = spec.states.shape_states(), O = spec.states.occlusions;
    const int R = level.rows, C = level.cols;
    const int L = R * C;
    const int per_node = L * SV * O;
    double joint = 1;
    for (int p = 0; p < t.num_parts(); ++p) joint *= per_node;
    if (joint > limit || double(t.num_landmarks) * per_node * L > limit)
        throw DomainError("infer_naive: state space exceeds the enumeration limit");
    InferenceResult r;
    r.rows = R;
    r.cols = C;
    auto [er, ec] = model_extent(spec);
    if (R < er || C < ec) {
        r.empty = true;
        r.reason = "level smaller than model extent";
        return r;
    }
    const double pen = loss_margin / t.num_landmarks;

    // Per landmark and parent state: best message and its location.
    std::vector<double> lm_val(size_t(t.num_landmarks) * per_node);
    std::vector<int> lm_loc(size_t(t.num_landmarks) * per_node);
    for (int k = 0; k < t.num_landmarks; ++k) {
        std::vector<double> u(size_t(SV) * L);
        for (int s = 0; s < SV; ++s)
            for (int q = 0; q < L; ++q) u[size_t(s) * L + q] = unary_score(m, level, k, s, {q / C, q % C});
        for (int lp = 0; lp < L; ++lp) {
            const GridLoc pl{lp / C, lp % C};
            for (int s = 0; s < SV; ++s) {
                const auto w = m.landmark_spring(k, s);
                const Offset a = spec.landmark_anchor[k][s];
                for (int o = 0; o < O; ++o) {
                    const size_t idx = size_t(k) * per_node + (size_t(lp) * SV + s) * O + o;
                    const double b = m.w[m.layout.landmark_bias(k, s, o)];
                    if (is_neg_inf(b)) {
                        lm_val[idx] = kNegInf;
                        lm_loc[idx] = -1;
                        continue;
                    }
                    if (spec.landmark_occluded(k, s, o)) {
                        lm_val[idx] = b - pen;
                        lm_loc[idx] = std::clamp(pl.y + a.dy, 0, R - 1) * C + std::clamp(pl.x + a.dx, 0, C - 1);
                        continue;
                    }
                    double best = 0;
                    int arg = -1;
                    for (int q = 0; q < L; ++q) {
                        DeformationFeature d = deformation(pl, {q / C, q % C}, a);
                        double v = u[size_t(s) * L + q] + (w[0] * d.dx + w[1] * d.dy + w[2] * d.dxx + w[3] * d.dyy);
                        if (arg < 0 || v > best) {
                            best = v;
                            arg = q;
                        }
                    }
                    lm_val[idx] = best + b;
                    lm_loc[idx] = arg;
                }
            }
        }
    }

    const int np = t.num_parts();
    std::vector<int> order = t.preorder;  // most significant digit first
    std::vector<int> digit(np, 0);
    std::vector<NodeState> st(np);
    double best_score = kNegInf;
    std::vector<int> best_digits;
    auto decode = [&](int p, int v) {
        const int o = v % O, s = (v / O) % SV, l = v / (O * SV);
        st[p] = {{l / C, l % C}, s, o};
    };
    for (int p = 0; p < np; ++p) decode(p, 0);
    const double w0 = m.w[m.layout.root_offset()];
    while (true) {
        double score = w0;
        bool ok = true;
        for (int j = 0; j < np && ok; ++j) {
            if (j == t.root) continue;
            const NodeState& ch = st[j];
            const NodeState& pa = st[t.part_parent[j]];
            double b = m.w[m.layout.part_bias(j, pa.shape, ch.shape, pa.occ, ch.occ)];
            if (is_neg_inf(b)) ok = false;
            else {
                const auto w = m.part_spring(j, ch.shape);
                DeformationFeature d = deformation(pa.loc, ch.loc, spec.part_anchor[j][ch.shape]);
                score += b + (w[0] * d.dx + w[1] * d.dy + w[2] * d.dxx + w[3] * d.dyy);
            }
        }
        for (int k = 0; k < t.num_landmarks && ok; ++k) {
            const NodeState& pa = st[t.landmark_part[k]];
            const size_t idx = size_t(k) * per_node + (size_t(pa.loc.y * C + pa.loc.x) * SV + pa.shape) * O + pa.occ;
            if (is_neg_inf(lm_val[idx])) ok = false;
            else score += lm_val[idx];
        }
        if (ok && (best_digits.empty() || score > best_score)) {
            best_score = score;
            best_digits = digit;
        }
        int pos = np - 1;
        while (pos >= 0) {
            int p = order[pos];
            if (++digit[p] < per_node) {
                decode(p, digit[p]);
                break;
            }
            digit[p] = 0;
            decode(p, 0);
            --pos;
        }
        if (pos < 0) break;
    }
    if (best_digits.empty()) {
        r.reason = "no feasible configuration";
        return r;
    }
    r.feasible = true;
    r.score = best_score;
    for (int p = 0; p < np; ++p) decode(p, best_digits[p]);
    r.best.parts = st;
    r.best.landmarks.resize(t.num_landmarks);
    for (int k = 0; k < t.num_landmarks; ++k) {
        const NodeState& pa = st[t.landmark_part[k]];
        const size_t idx = size_t(k) * per_node + (size_t(pa.loc.y * C + pa.loc.x) * SV + pa.shape) * O + pa.occ;
        r.best.landmarks[k] = {{lm_loc[idx] / C, lm_loc[idx] % C}, pa.shape, pa.occ};
    }
    // Root score map: best over the remaining states for each root location.
    r.root_scores.assign(L, kNegInf);
    return r;
}

}  // namespace hpm
