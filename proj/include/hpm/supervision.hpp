#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hpm/common.hpp"
#include "hpm/dataset.hpp"
#include "hpm/image.hpp"
#include "hpm/topology.hpp"

namespace hpm {

struct ProcrustesResult {
    Similarity transform;  // maps A onto B
    double residual = 0;   // RMS distance after alignment
};

// Least-squares similarity (no reflection) taking A to B. Throws DomainError
// for mismatched or degenerate shapes.
ProcrustesResult procrustes_align(const std::vector<Point>& a, const std::vector<Point>& b);

struct ReferenceShape {
    int view = 0;
    std::vector<Point> points;
};

struct ReferenceShapeSet {
    int views = 0;
    std::vector<ReferenceShape> shapes;
    std::vector<std::pair<int, int>> mirror_views;  // (source, target)
    double ipd = 48;

    void validate(int num_landmarks) const;
};

// `views` yaw-rotated copies of the mean face, `step` degrees apart and
// centred on frontal. View v mirrors view views-1-v.
ReferenceShapeSet default_reference_set(int views, double step_degrees = 15.0, double ipd = 48.0);
ReferenceShapeSet reference_set_from_yaws(const std::vector<double>& yaws, double ipd = 48.0);
nlohmann::json reference_set_to_json(const ReferenceShapeSet& r);
ReferenceShapeSet reference_set_from_json(const nlohmann::json& j);
ReferenceShapeSet load_reference_set(const std::string& path);

double interocular_distance(const std::vector<Point>& pts);

// Mirror image of a landmark set about x = 0, relabelled through the mirror table.
std::vector<Point> mirror_points(const std::vector<Point>& pts, const std::vector<int>& mirror);

// Viewpoint of the reference with the smallest residual; ties go to the lowest view.
int assign_viewpoint(const std::vector<Point>& pts, const ReferenceShapeSet& refs);

struct NormalizedShape {
    int view = 0;
    Similarity transform;  // image -> canonical
    std::vector<Point> points;
    double residual = 0;
};
NormalizedShape normalize_example(const std::vector<Point>& pts, const ReferenceShapeSet& refs);

struct KMeansResult {
    std::vector<std::vector<double>> centers;
    std::vector<int> assignment;
    double distortion = 0;  // sum of squared distances
    int iterations = 0;
};

// k-means++ seeding followed by Lloyd iterations. Ties go to the lowest center.
KMeansResult kmeans(const std::vector<std::vector<double>>& data, int k, uint64_t seed, int max_iter = 100);

// Centroid-subtracted coordinates of a part's landmarks, interleaved x, y.
std::vector<double> part_shape_vector(const Topology& t, int part, const std::vector<Point>& pts);

KMeansResult cluster_part_shapes(const std::vector<std::vector<double>>& shapes, int k, uint64_t seed);

// Occlusion bit per landmark: inside quadrant q of the cut at (a, b).
// Bit 0 of q selects x > a, bit 1 selects y > b. Membership is strict.
std::vector<char> quadrant_mask(const std::vector<Point>& layout, double a, double b, int q);
std::vector<char> sample_quadrant_occlusion(const std::vector<Point>& layout, Rng& rng);

struct OcclusionLibrary {
    std::vector<uint64_t> patterns;  // patterns[0] is all-visible
    std::vector<int> assignment;     // per input mask
};

OcclusionLibrary cluster_occlusion_patterns(const std::vector<uint64_t>& masks, int nbits, int k, uint64_t seed);

struct SupervisedExample {
    int face = 0;
    int variant = 0;  // 0 for the original, then virtual positives
    std::string image;
    int view = 0;
    Similarity transform;  // image -> canonical
    std::vector<Point> landmarks;  // canonical frame
    std::vector<char> occluded;
    std::vector<int> part_shape;  // local shape index per part
    std::vector<int> part_occ;    // pattern index per part
};

// The original example plus `count` copies carrying sampled quadrant masks.
// Coordinates and images are shared with the original.
std::vector<SupervisedExample> generate_virtual_positives(const SupervisedExample& ex, int count, Rng& rng);

struct SupervisionOptions {
    int shapes = 3;
    int occlusions = 4;
    int virtual_count = 8;
    uint64_t seed = 0;
    int workers = 1;
};

struct Supervision {
    Topology topology;
    int views = 1, shapes = 1, occlusions = 1;
    std::vector<std::pair<int, int>> mirror_views;
    double ipd = 48;
    std::vector<std::vector<std::vector<uint64_t>>> patterns;  // [part][view][o]
    std::vector<SupervisedExample> examples;
};

Supervision supervise(const DatasetManifest& data, const Topology& topology, const ReferenceShapeSet& refs,
                      const SupervisionOptions& opt);

// Seven-part labels derived from a supervision run: points are means of their
// source landmarks, a part is occluded when at least half its sources are.
Supervision derive_lowres(const Supervision& s, const Topology& lowres);

nlohmann::json supervision_to_json(const Supervision& s);
Supervision supervision_from_json(const nlohmann::json& j);
void save_supervision(const Supervision& s, const std::string& path);
Supervision load_supervision(const std::string& path);

}  // namespace hpm
