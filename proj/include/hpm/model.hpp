#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hpm/hog.hpp"
#include "hpm/topology.hpp"

namespace hpm {

struct Offset {
    int dy = 0, dx = 0;
    bool operator==(const Offset&) const = default;
};

// Effective shape state s = view * shapes + local.
struct StateSpace {
    int views = 1;
    int shapes = 1;
    int occlusions = 1;
    // patterns[part][view][o]: bit i set when the part's i-th landmark is hidden.
    std::vector<std::vector<std::vector<uint64_t>>> patterns;
    // Tied viewpoint pairs (source, target); the target mirrors the source.
    std::vector<std::pair<int, int>> mirror_views;

    int shape_states() const { return views * shapes; }
    int view_of(int s) const { return s / shapes; }
    int local_of(int s) const { return s % shapes; }
};

struct ModelSpec {
    std::string mixture = "full";
    Topology topology;
    StateSpace states;
    int cell_size = 8;
    int template_rows = 5, template_cols = 5;
    int feature_dim = kHogDim;
    std::vector<std::vector<Offset>> part_anchor;      // [part][s], offset from parent part
    std::vector<std::vector<Offset>> landmark_anchor;  // [landmark][s], offset from owning part

    bool landmark_occluded(int k, int s, int o) const;
    int occluded_count(int part, int view, int o) const;
    // Throws ConfigError on inconsistent dimensions.
    void validate() const;
};

// Offsets of every parameter group in the flat weight vector.
class ParamLayout {
public:
    ParamLayout() = default;
    explicit ParamLayout(const ModelSpec& spec);

    size_t size() const { return size_; }
    size_t root_offset() const { return 0; }
    size_t template_size() const { return tsize_; }
    size_t appearance(int k, int s) const { return app_ + (size_t(k) * sv_ + s) * tsize_; }
    size_t part_spring(int j, int s) const { return pspring_ + (size_t(edge_[j]) * sv_ + s) * 4; }
    size_t landmark_spring(int k, int s) const { return lspring_ + (size_t(k) * sv_ + s) * 4; }
    size_t part_bias(int j, int si, int sj, int oi, int oj) const {
        return pbias_ + size_t(edge_[j]) * ptable_ + ((size_t(si) * sv_ + sj) * o_ + oi) * o_ + oj;
    }
    size_t landmark_bias(int k, int s, int o) const { return lbias_ + (size_t(k) * sv_ + s) * o_ + o; }
    int edge_of(int part) const { return edge_[part]; }

    size_t appearance_begin() const { return app_; }
    size_t appearance_end() const { return pspring_; }
    size_t springs_begin() const { return pspring_; }
    size_t springs_end() const { return pbias_; }
    size_t biases_begin() const { return pbias_; }

private:
    size_t size_ = 0, tsize_ = 0, app_ = 0, pspring_ = 0, lspring_ = 0, pbias_ = 0, lbias_ = 0;
    size_t ptable_ = 0;
    int sv_ = 1, o_ = 1;
    std::vector<int> edge_;
};

struct Model {
    ModelSpec spec;
    ParamLayout layout;
    std::vector<double> w;

    Model() = default;
    // Zero weights, springs set to -spring_init on the squared terms, and
    // cross-viewpoint part biases fixed at the sentinel.
    explicit Model(ModelSpec s, double spring_init = 0.01);

    const double* appearance(int k, int s) const { return w.data() + layout.appearance(k, s); }
    std::array<double, 4> part_spring(int j, int s) const;
    std::array<double, 4> landmark_spring(int k, int s) const;
};

struct NodeState {
    GridLoc loc;
    int shape = 0;
    int occ = 0;
    bool operator==(const NodeState&) const = default;
};

struct Configuration {
    std::vector<NodeState> parts;
    std::vector<NodeState> landmarks;
    int level = 0;
    int rotation = 0;
    bool operator==(const Configuration&) const = default;
};

// (dx, dy, dx^2, dy^2) of child relative to parent plus anchor.
struct DeformationFeature {
    double dx = 0, dy = 0, dxx = 0, dyy = 0;
    std::array<double, 4> values() const { return {dx, dy, dxx, dyy}; }
};
DeformationFeature deformation(GridLoc parent, GridLoc child, Offset anchor);

double unary_score(const Model& m, const FeatureLevel& level, int k, int s, GridLoc loc);

// Throws DomainError for malformed configurations or locations outside the grid.
void validate_configuration(const ModelSpec& spec, const FeatureLevel& level, const Configuration& c);

double score_configuration(const Model& m, const FeatureLevel& level, const Configuration& c);

// Fraction of landmarks in an occluded state.
double delta_occlusion(const ModelSpec& spec, const Configuration& c);
int occluded_landmarks(const ModelSpec& spec, const Configuration& c);

// Joint feature: sparse scalars plus dense appearance blocks.
struct FeatureVector {
    struct Block {
        size_t offset = 0;
        std::shared_ptr<const std::vector<float>> data;
    };
    std::vector<std::pair<size_t, double>> scalars;
    std::vector<Block> blocks;

    double dot(const std::vector<double>& w) const;
    // w += scale * this
    void add_to(std::vector<double>& w, double scale) const;
    double squared_norm() const;
    std::vector<double> dense(size_t n) const;
    // Key used to detect duplicate constraints.
    uint64_t hash() const;
    bool same_as(const FeatureVector& o) const;
};

// Inner product of two joint features. Scalars and blocks never overlap each other.
double dot(const FeatureVector& a, const FeatureVector& b);
// Same feature with every index moved by `offset`.
FeatureVector shifted(const FeatureVector& f, size_t offset);

FeatureVector assemble_feature_vector(const Model& m, const FeatureLevel& level, const Configuration& c);

// For each parameter of a mirrored (target) view, the source parameter and the
// sign with which it is copied. src[i] < 0 for parameters that are not tied.
struct MirrorMap {
    std::vector<int64_t> src;
    std::vector<signed char> sign;
};
MirrorMap mirror_map(const ModelSpec& spec);

// Pattern of `part` obtained by mirroring a pattern of part_mirror[part].
uint64_t mirror_pattern(const Topology& t, int part, uint64_t src_mask);

// Copies source-view parameters, anchors and patterns onto their mirror targets.
Model tie_mirror_parameters(const Model& m);

// Rewrites a feature vector living in target-view parameters onto the tied source
// parameters, so training updates a single shared copy.
FeatureVector fold_mirror(const FeatureVector& f, const MirrorMap& map);

// Configuration of the mirrored face on a horizontally flipped level with `cols` columns.
Configuration mirror_configuration(const ModelSpec& spec, const Configuration& c, int cols);

// Indices in w that hold the fixed sentinel.
std::vector<char> fixed_mask(const Model& m);

}  // namespace hpm
