#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "hpm/dataset.hpp"
#include "hpm/detection.hpp"
#include "hpm/image.hpp"
#include "hpm/model.hpp"

namespace hpm {

// Linear map from N predicted landmarks to M target landmarks. Coordinates are
// interleaved (x0, y0, x1, y1, ...); target = beta^T * source.
struct LandmarkMap {
    int sources = 0, targets = 0;
    double lambda = 0;
    Eigen::MatrixXd beta;                   // 2N x 2M
    std::vector<std::vector<char>> allowed;  // [target][source]

    std::vector<Point> apply(const std::vector<Point>& pred) const;
};

// Each target landmark is regressed on the source landmarks of its block only.
// source_block[k] and target_block[p] name the block of each landmark.
LandmarkMap fit_landmark_map(const std::vector<std::vector<Point>>& preds, const std::vector<std::vector<Point>>& gts,
                             double lambda, const std::vector<int>& source_block,
                             const std::vector<int>& target_block);

// Nearest source landmark for every target landmark, from mean positions.
std::vector<int> occlusion_correspondence(const std::vector<Point>& source_mean,
                                          const std::vector<Point>& target_mean);
std::vector<bool> transfer_occlusion(const std::vector<bool>& flags, const std::vector<int>& correspondence);

struct LocalizationReport {
    std::vector<double> errors;  // per localized image, mean distance / IPD
    int missing = 0;             // images without an accepted detection
    double mean_error = 0;
    double threshold = 0.1;
    double success_rate = 0;  // error <= threshold over all images, missing count as failures
    std::vector<std::pair<double, double>> ced;  // (threshold, fraction)
};

struct EyeIndices {
    std::vector<int> left, right;
    static EyeIndices face68();
};

double eye_distance(const std::vector<Point>& pts, const EyeIndices& eyes);

// `found[i]` false marks an image without a prediction.
LocalizationReport localization_metrics(const std::vector<std::vector<Point>>& preds,
                                        const std::vector<std::vector<Point>>& gts, const EyeIndices& eyes,
                                        double threshold = 0.1, const std::vector<bool>& found = {});

// Threshold grid 0, 0.005, ..., 0.3.
std::vector<double> ced_grid();

struct OcclusionPR {
    long tp = 0, fp = 0, fn = 0, tn = 0;
    double precision = 1, recall = 0, f1 = 0;
};
// With no predicted occlusions precision is 1.
OcclusionPR occlusion_pr(const std::vector<bool>& pred, const std::vector<bool>& gt);
OcclusionPR occlusion_pr(const std::vector<std::vector<bool>>& pred, const std::vector<std::vector<bool>>& gt);

// b + |b| * alpha on every landmark bias of an occluded state.
Model perturb_occlusion_biases(const Model& m, double alpha);
Detector perturb_occlusion_biases(const Detector& d, double alpha);

struct SweepPoint {
    double alpha = 0;
    OcclusionPR pr;
    LocalizationReport localization;
    std::vector<Detection> detections;  // per image, empty landmarks when missing
    std::vector<bool> found;
};

struct EvalFace {
    std::string image;
    std::vector<Point> landmarks;
    std::vector<bool> occluded;
    Box box;
};
std::vector<EvalFace> eval_faces(const DatasetManifest& m, double box_pad = 0.1);

// Runs localize_in_box for every alpha, reusing each image's unary responses.
std::vector<SweepPoint> occlusion_sweep(const Detector& d, const std::vector<EvalFace>& faces,
                                        const std::vector<double>& alphas, const DetectOptions& opt,
                                        const EyeIndices& eyes, double min_overlap = 0.7,
                                        double success_threshold = 0.1);

struct PRPoint {
    double threshold = 0;
    long tp = 0, fp = 0;
    double precision = 1, recall = 0;
};
struct DetectionPR {
    std::vector<PRPoint> all;
    std::vector<PRPoint> occluded;  // tp_o / (tp_o + fp), tp_o / n_o
    long positives = 0, occluded_positives = 0;
    double ap = 0, ap_occluded = 0;
};

struct GroundTruthBox {
    Box box;
    bool occluded = false;
};

// Greedy score-ordered matching at IoU >= `iou_min`, one detection per ground truth.
DetectionPR detection_pr(const std::vector<std::vector<Detection>>& dets,
                         const std::vector<std::vector<GroundTruthBox>>& gts, double iou_min = 0.5);
// Area under the precision envelope.
double average_precision(const std::vector<PRPoint>& curve, long positives);

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
};
std::string svg_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                     const std::vector<Series>& series, double xmax = 1.0, double ymax = 1.0);
std::string csv_table(const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows);

// Green dots on visible landmarks, red on occluded ones, white box.
Image render_overlay(const Image& image, const Detection& d);

}  // namespace hpm
