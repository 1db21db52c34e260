#include "hpm/model.hpp"

#include <cmath>
#include <algorithm>
#include <cstring>

#include "hpm/common.hpp"

namespace hpm {

bool ModelSpec::landmark_occluded(int k, int s, int o) const {
    const int p = topology.landmark_part[k];
    return (states.patterns[p][states.view_of(s)][o] >> topology.landmark_slot[k]) & 1u;
}

int ModelSpec::occluded_count(int part, int view, int o) const {
    return __builtin_popcountll(states.patterns[part][view][o]);
}

void ModelSpec::validate() const {
    const auto& t = topology;
    const int np = t.num_parts(), sv = states.shape_states();
    if (states.views < 1 || states.shapes < 1 || states.occlusions < 1)
        throw ConfigError("model: state counts must be >= 1");
    if (cell_size < 2 || template_rows < 1 || template_cols < 1 || feature_dim < 1)
        throw ConfigError("model: bad template geometry");
    if (template_rows % 2 == 0 || template_cols % 2 == 0)
        throw ConfigError("model: template dimensions must be odd");
    if (int(states.patterns.size()) != np) throw ConfigError("model: pattern table does not match part count");
    for (int p = 0; p < np; ++p) {
        if (int(states.patterns[p].size()) != states.views) throw ConfigError("model: pattern table view count");
        const uint64_t full = t.part_landmarks[p].size() == 64 ? ~0ull : ((1ull << t.part_landmarks[p].size()) - 1);
        for (const auto& v : states.patterns[p]) {
            if (int(v.size()) != states.occlusions) throw ConfigError("model: pattern table occlusion count");
            for (uint64_t m : v)
                if (m & ~full) throw ConfigError("model: pattern has bits beyond the part's landmarks");
        }
    }
    if (int(part_anchor.size()) != np || int(landmark_anchor.size()) != t.num_landmarks)
        throw ConfigError("model: anchor table size mismatch");
    for (const auto& a : part_anchor)
        if (int(a.size()) != sv) throw ConfigError("model: part anchor state count");
    for (const auto& a : landmark_anchor)
        if (int(a.size()) != sv) throw ConfigError("model: landmark anchor state count");
    for (auto [a, b] : states.mirror_views) {
        if (a < 0 || b < 0 || a >= states.views || b >= states.views || a == b)
            throw ConfigError("model: bad mirror viewpoint pair");
        if (!t.has_mirror()) throw ConfigError("model: mirror views declared without a landmark correspondence table");
    }
}

ParamLayout::ParamLayout(const ModelSpec& spec) {
    const auto& t = spec.topology;
    sv_ = spec.states.shape_states();
    o_ = spec.states.occlusions;
    tsize_ = size_t(spec.template_rows) * spec.template_cols * spec.feature_dim;
    edge_.assign(t.num_parts(), -1);
    int ne = 0;
    for (int p : t.preorder)
        if (p != t.root) edge_[p] = ne++;
    ptable_ = size_t(sv_) * sv_ * o_ * o_;
    app_ = 1;
    pspring_ = app_ + size_t(t.num_landmarks) * sv_ * tsize_;
    lspring_ = pspring_ + size_t(ne) * sv_ * 4;
    pbias_ = lspring_ + size_t(t.num_landmarks) * sv_ * 4;
    lbias_ = pbias_ + size_t(ne) * ptable_;
    size_ = lbias_ + size_t(t.num_landmarks) * sv_ * o_;
}

Model::Model(ModelSpec s, double spring_init) : spec(std::move(s)) {
    spec.validate();
    layout = ParamLayout(spec);
    w.assign(layout.size(), 0.0);
    const auto& t = spec.topology;
    const int sv = spec.states.shape_states(), no = spec.states.occlusions;
    for (int s2 = 0; s2 < sv; ++s2) {
        for (int p = 0; p < t.num_parts(); ++p) {
            if (p == t.root) continue;
            size_t i = layout.part_spring(p, s2);
            w[i + 2] = w[i + 3] = -spring_init;
        }
        for (int k = 0; k < t.num_landmarks; ++k) {
            size_t i = layout.landmark_spring(k, s2);
            w[i + 2] = w[i + 3] = -spring_init;
        }
    }
    for (int p = 0; p < t.num_parts(); ++p) {
        if (p == t.root) continue;
        for (int si = 0; si < sv; ++si)
            for (int sj = 0; sj < sv; ++sj) {
                if (spec.states.view_of(si) == spec.states.view_of(sj)) continue;
                for (int oi = 0; oi < no; ++oi)
                    for (int oj = 0; oj < no; ++oj) w[layout.part_bias(p, si, sj, oi, oj)] = kNegInf;
            }
    }
}

std::array<double, 4> Model::part_spring(int j, int s) const {
    size_t i = layout.part_spring(j, s);
    return {w[i], w[i + 1], w[i + 2], w[i + 3]};
}

std::array<double, 4> Model::landmark_spring(int k, int s) const {
    size_t i = layout.landmark_spring(k, s);
    return {w[i], w[i + 1], w[i + 2], w[i + 3]};
}

DeformationFeature deformation(GridLoc parent, GridLoc child, Offset a) {
    DeformationFeature d;
    d.dx = double(child.x - parent.x - a.dx);
    d.dy = double(child.y - parent.y - a.dy);
    d.dxx = d.dx * d.dx;
    d.dyy = d.dy * d.dy;
    return d;
}

double unary_score(const Model& m, const FeatureLevel& level, int k, int s, GridLoc loc) {
    auto patch = extract_patch(level, loc, m.spec.template_rows, m.spec.template_cols);
    const double* t = m.appearance(k, s);
    double acc = 0;
    for (size_t i = 0; i < patch.size(); ++i) acc += t[i] * patch[i];
    return acc;
}

void validate_configuration(const ModelSpec& spec, const FeatureLevel& level, const Configuration& c) {
    const auto& t = spec.topology;
    if (int(c.parts.size()) != t.num_parts() || int(c.landmarks.size()) != t.num_landmarks)
        throw DomainError("configuration does not match topology");
    const int sv = spec.states.shape_states(), no = spec.states.occlusions;
    auto check = [&](const NodeState& n) {
        if (n.shape < 0 || n.shape >= sv || n.occ < 0 || n.occ >= no)
            throw DomainError("configuration state index out of range");
        if (!level.contains(n.loc)) throw DomainError("configuration location outside the feature grid");
    };
    for (const auto& n : c.parts) check(n);
    for (const auto& n : c.landmarks) check(n);
}

namespace {

double spring_dot(const std::array<double, 4>& w, const DeformationFeature& d) {
    return w[0] * d.dx + w[1] * d.dy + w[2] * d.dxx + w[3] * d.dyy;
}

}  // namespace

double score_configuration(const Model& m, const FeatureLevel& level, const Configuration& c) {
    const auto& spec = m.spec;
    const auto& t = spec.topology;
    validate_configuration(spec, level, c);
    double total = m.w[m.layout.root_offset()];
    for (int j = 0; j < t.num_parts(); ++j) {
        if (j == t.root) continue;
        const NodeState& ch = c.parts[j];
        const NodeState& pa = c.parts[t.part_parent[j]];
        double b = m.w[m.layout.part_bias(j, pa.shape, ch.shape, pa.occ, ch.occ)];
        if (is_neg_inf(b)) return kNegInf;
        total += b;
        total += spring_dot(m.part_spring(j, ch.shape), deformation(pa.loc, ch.loc, spec.part_anchor[j][ch.shape]));
    }
    for (int k = 0; k < t.num_landmarks; ++k) {
        const NodeState& lm = c.landmarks[k];
        const NodeState& pa = c.parts[t.landmark_part[k]];
        if (lm.shape != pa.shape || lm.occ != pa.occ) return kNegInf;
        double b = m.w[m.layout.landmark_bias(k, pa.shape, pa.occ)];
        if (is_neg_inf(b)) return kNegInf;
        total += b;
        if (spec.landmark_occluded(k, pa.shape, pa.occ)) continue;
        total += unary_score(m, level, k, pa.shape, lm.loc);
        total += spring_dot(m.landmark_spring(k, pa.shape),
                            deformation(pa.loc, lm.loc, spec.landmark_anchor[k][pa.shape]));
    }
    return total;
}

int occluded_landmarks(const ModelSpec& spec, const Configuration& c) {
    int n = 0;
    for (int k = 0; k < spec.topology.num_landmarks; ++k)
        if (spec.landmark_occluded(k, c.landmarks[k].shape, c.landmarks[k].occ)) ++n;
    return n;
}

double delta_occlusion(const ModelSpec& spec, const Configuration& c) {
    if (int(c.landmarks.size()) != spec.topology.num_landmarks)
        throw DomainError("configuration does not match topology");
    return double(occluded_landmarks(spec, c)) / spec.topology.num_landmarks;
}

double FeatureVector::dot(const std::vector<double>& w) const {
    double acc = 0;
    for (const auto& [i, v] : scalars) acc += w[i] * v;
    for (const auto& b : blocks) {
        const double* wp = w.data() + b.offset;
        const float* d = b.data->data();
        double s = 0;
        for (size_t i = 0; i < b.data->size(); ++i) s += wp[i] * d[i];
        acc += s;
    }
    return acc;
}

void FeatureVector::add_to(std::vector<double>& w, double scale) const {
    for (const auto& [i, v] : scalars) w[i] += scale * v;
    for (const auto& b : blocks) {
        double* wp = w.data() + b.offset;
        const float* d = b.data->data();
        for (size_t i = 0; i < b.data->size(); ++i) wp[i] += scale * d[i];
    }
}

std::vector<double> FeatureVector::dense(size_t n) const {
    std::vector<double> r(n, 0.0);
    add_to(r, 1.0);
    return r;
}

double FeatureVector::squared_norm() const {
    // Scalars may repeat an index; accumulate densely over the touched set.
    std::vector<std::pair<size_t, double>> s = scalars;
    std::sort(s.begin(), s.end());
    double acc = 0;
    for (size_t i = 0; i < s.size();) {
        size_t j = i;
        double v = 0;
        while (j < s.size() && s[j].first == s[i].first) v += s[j++].second;
        acc += v * v;
        i = j;
    }
    for (const auto& b : blocks)
        for (float f : *b.data) acc += double(f) * f;
    return acc;
}

uint64_t FeatureVector::hash() const {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void* p, size_t n) {
        const unsigned char* c = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= c[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& [i, v] : scalars) {
        mix(&i, sizeof i);
        mix(&v, sizeof v);
    }
    for (const auto& b : blocks) {
        mix(&b.offset, sizeof b.offset);
        mix(b.data->data(), b.data->size() * sizeof(float));
    }
    return h;
}

bool FeatureVector::same_as(const FeatureVector& o) const {
    if (scalars != o.scalars || blocks.size() != o.blocks.size()) return false;
    for (size_t i = 0; i < blocks.size(); ++i)
        if (blocks[i].offset != o.blocks[i].offset || *blocks[i].data != *o.blocks[i].data) return false;
    return true;
}

namespace {

std::vector<std::pair<size_t, double>> merged_scalars(const FeatureVector& f) {
    std::vector<std::pair<size_t, double>> s = f.scalars;
    std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::pair<size_t, double>> r;
    for (const auto& e : s) {
        if (!r.empty() && r.back().first == e.first) r.back().second += e.second;
        else r.push_back(e);
    }
    return r;
}

}  // namespace

double dot(const FeatureVector& a, const FeatureVector& b) {
    auto sa = merged_scalars(a), sb = merged_scalars(b);
    double acc = 0;
    for (size_t i = 0, j = 0; i < sa.size() && j < sb.size();) {
        if (sa[i].first < sb[j].first) ++i;
        else if (sb[j].first < sa[i].first) ++j;
        else acc += sa[i++].second * sb[j++].second;
    }
    for (const auto& x : a.blocks) {
        const size_t x0 = x.offset, x1 = x.offset + x.data->size();
        for (const auto& y : b.blocks) {
            const size_t y0 = y.offset, y1 = y.offset + y.data->size();
            const size_t lo = std::max(x0, y0), hi = std::min(x1, y1);
            if (lo >= hi) continue;
            const float* p = x.data->data() + (lo - x0);
            const float* q = y.data->data() + (lo - y0);
            double s = 0;
            for (size_t k = 0; k < hi - lo; ++k) s += double(p[k]) * q[k];
            acc += s;
        }
    }
    return acc;
}

FeatureVector shifted(const FeatureVector& f, size_t offset) {
    FeatureVector r = f;
    for (auto& s : r.scalars) s.first += offset;
    for (auto& b : r.blocks) b.offset += offset;
    return r;
}

FeatureVector assemble_feature_vector(const Model& m, const FeatureLevel& level, const Configuration& c) {
    const auto& spec = m.spec;
    const auto& t = spec.topology;
    if (is_neg_inf(score_configuration(m, level, c)))
        throw DomainError("configuration has no feature representation (sentinel score)");
    FeatureVector f;
    f.scalars.emplace_back(m.layout.root_offset(), 1.0);
    auto add_spring = [&](size_t off, const DeformationFeature& d) {
        f.scalars.emplace_back(off, d.dx);
        f.scalars.emplace_back(off + 1, d.dy);
        f.scalars.emplace_back(off + 2, d.dxx);
        f.scalars.emplace_back(off + 3, d.dyy);
    };
    for (int j : t.preorder) {
        if (j == t.root) continue;
        const NodeState& ch = c.parts[j];
        const NodeState& pa = c.parts[t.part_parent[j]];
        add_spring(m.layout.part_spring(j, ch.shape), deformation(pa.loc, ch.loc, spec.part_anchor[j][ch.shape]));
        f.scalars.emplace_back(m.layout.part_bias(j, pa.shape, ch.shape, pa.occ, ch.occ), 1.0);
    }
    for (int k = 0; k < t.num_landmarks; ++k) {
        const NodeState& pa = c.parts[t.landmark_part[k]];
        f.scalars.emplace_back(m.layout.landmark_bias(k, pa.shape, pa.occ), 1.0);
        if (spec.landmark_occluded(k, pa.shape, pa.occ)) continue;
        const NodeState& lm = c.landmarks[k];
        add_spring(m.layout.landmark_spring(k, pa.shape), deformation(pa.loc, lm.loc, spec.landmark_anchor[k][pa.shape]));
        auto patch = extract_patch(level, lm.loc, spec.template_rows, spec.template_cols);
        auto data = std::make_shared<std::vector<float>>(patch.begin(), patch.end());
        f.blocks.push_back({m.layout.appearance(k, pa.shape), std::move(data)});
    }
    return f;
}

MirrorMap mirror_map(const ModelSpec& spec) {
    ParamLayout L(spec);
    MirrorMap mm;
    mm.src.assign(L.size(), -1);
    mm.sign.assign(L.size(), 1);
    const auto& st = spec.states;
    if (st.mirror_views.empty()) return mm;
    const auto& t = spec.topology;
    if (!t.has_mirror()) throw ConfigError("mirror tying requires a landmark correspondence table");
    const auto& perm = hog_flip_permutation();
    const int S = st.shapes, O = st.occlusions, th = spec.template_rows, tw = spec.template_cols, D = spec.feature_dim;
    if (D != kHogDim) throw ConfigError("mirror tying requires HOG features");
    for (auto [vs, vt] : st.mirror_views) {
        for (int l = 0; l < S; ++l) {
            const int ss = vs * S + l, stt = vt * S + l;
            for (int k = 0; k < t.num_landmarks; ++k) {
                const int mk = t.landmark_mirror[k];
                size_t dst = L.appearance(k, stt), src = L.appearance(mk, ss);
                for (int y = 0; y < th; ++y)
                    for (int x = 0; x < tw; ++x)
                        for (int c = 0; c < D; ++c)
                            mm.src[dst + (size_t(y) * tw + x) * D + c] =
                                int64_t(src + (size_t(y) * tw + (tw - 1 - x)) * D + perm[c]);
                size_t ds = L.landmark_spring(k, stt), sp = L.landmark_spring(mk, ss);
                for (int i = 0; i < 4; ++i) mm.src[ds + i] = int64_t(sp + i);
                mm.sign[ds] = -1;
                for (int o = 0; o < O; ++o) mm.src[L.landmark_bias(k, stt, o)] = int64_t(L.landmark_bias(mk, ss, o));
            }
            for (int j = 0; j < t.num_parts(); ++j) {
                if (j == t.root) continue;
                const int mj = t.part_mirror[j];
                size_t ds = L.part_spring(j, stt), sp = L.part_spring(mj, ss);
                for (int i = 0; i < 4; ++i) mm.src[ds + i] = int64_t(sp + i);
                mm.sign[ds] = -1;
                for (int li = 0; li < S; ++li)
                    for (int oi = 0; oi < O; ++oi)
                        for (int oj = 0; oj < O; ++oj)
                            mm.src[L.part_bias(j, vt * S + li, stt, oi, oj)] =
                                int64_t(L.part_bias(mj, vs * S + li, ss, oi, oj));
            }
        }
    }
    return mm;
}

uint64_t mirror_pattern(const Topology& t, int part, uint64_t src_mask) {
    // Bit for landmark k of `part` comes from its mirror in the mirrored part.
    uint64_t r = 0;
    for (size_t slot = 0; slot < t.part_landmarks[part].size(); ++slot) {
        int k = t.part_landmarks[part][slot];
        int mk = t.landmark_mirror[k];
        if ((src_mask >> t.landmark_slot[mk]) & 1u) r |= 1ull << slot;
    }
    return r;
}

Model tie_mirror_parameters(const Model& m) {
    const auto& st = m.spec.states;
    Model r = m;
    if (st.mirror_views.empty()) return r;
    if (!m.spec.topology.has_mirror()) throw ConfigError("mirror tying requires a landmark correspondence table");
    MirrorMap mm = mirror_map(m.spec);
    for (size_t i = 0; i < mm.src.size(); ++i)
        if (mm.src[i] >= 0) {
            double v = m.w[size_t(mm.src[i])];
            r.w[i] = is_neg_inf(v) ? kNegInf : mm.sign[i] * v;
        }
    const auto& t = m.spec.topology;
    const int S = st.shapes;
    for (auto [vs, vt] : st.mirror_views) {
        for (int p = 0; p < t.num_parts(); ++p) {
            const int mp = t.part_mirror[p];
            for (int o = 0; o < st.occlusions; ++o)
                r.spec.states.patterns[p][vt][o] = mirror_pattern(t, p, m.spec.states.patterns[mp][vs][o]);
            for (int l = 0; l < S; ++l) {
                Offset a = m.spec.part_anchor[mp][vs * S + l];
                r.spec.part_anchor[p][vt * S + l] = {a.dy, -a.dx};
            }
        }
        for (int k = 0; k < t.num_landmarks; ++k) {
            const int mk = t.landmark_mirror[k];
            for (int l = 0; l < S; ++l) {
                Offset a = m.spec.landmark_anchor[mk][vs * S + l];
                r.spec.landmark_anchor[k][vt * S + l] = {a.dy, -a.dx};
            }
        }
    }
    return r;
}

FeatureVector fold_mirror(const FeatureVector& f, const MirrorMap& mm) {
    FeatureVector r;
    r.scalars.reserve(f.scalars.size());
    for (const auto& [i, v] : f.scalars) {
        if (mm.src[i] >= 0) r.scalars.emplace_back(size_t(mm.src[i]), mm.sign[i] * v);
        else r.scalars.emplace_back(i, v);
    }
    for (const auto& b : f.blocks) {
        if (mm.src[b.offset] < 0) {
            r.blocks.push_back(b);
            continue;
        }
        // A whole template maps onto a flipped template; rebuild the block in source order.
        const size_t n = b.data->size();
        int64_t lo = mm.src[b.offset];
        for (size_t i = 0; i < n; ++i) lo = std::min(lo, mm.src[b.offset + i]);
        auto data = std::make_shared<std::vector<float>>(n, 0.f);
        for (size_t i = 0; i < n; ++i) (*data)[size_t(mm.src[b.offset + i] - lo)] = (*b.data)[i];
        r.blocks.push_back({size_t(lo), std::move(data)});
    }
    return r;
}

Configuration mirror_configuration(const ModelSpec& spec, const Configuration& c, int cols) {
    const auto& t = spec.topology;
    const auto& st = spec.states;
    if (!t.has_mirror()) throw ConfigError("mirroring requires a landmark correspondence table");
    auto partner = [&](int v) {
        for (auto [a, b] : st.mirror_views) {
            if (a == v) return b;
            if (b == v) return a;
        }
        throw ConfigError("viewpoint " + std::to_string(v) + " has no mirror partner");
    };
    auto map_state = [&](NodeState n) {
        n.shape = partner(st.view_of(n.shape)) * st.shapes + st.local_of(n.shape);
        n.loc.x = cols - 1 - n.loc.x;
        return n;
    };
    Configuration r = c;
    for (int p = 0; p < t.num_parts(); ++p) r.parts[t.part_mirror[p]] = map_state(c.parts[p]);
    for (int k = 0; k < t.num_landmarks; ++k) r.landmarks[t.landmark_mirror[k]] = map_state(c.landmarks[k]);
    return r;
}

std::vector<char> fixed_mask(const Model& m) {
    std::vector<char> r(m.w.size(), 0);
    for (size_t i = 0; i < m.w.size(); ++i) r[i] = is_neg_inf(m.w[i]) ? 1 : 0;
    return r;
}

}  // namespace hpm
