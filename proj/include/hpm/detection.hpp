#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "hpm/dataset.hpp"
#include "hpm/image.hpp"
#include "hpm/inference.hpp"
#include "hpm/model_io.hpp"
#include "hpm/pyramid.hpp"

namespace hpm {

struct Detection {
    double score = kNegInf;
    Box box;
    std::vector<Point> landmarks;  // image pixels
    std::vector<bool> occluded;
    int viewpoint = 0;
    double rotation = 0;  // degrees
    int level = 0;
    int component = 0;
    std::string mixture = "full";
    Configuration config;
};

struct DetectOptions {
    double threshold = 0.0;
    double nms_iou = 0.3;
    double box_pad = 0.1;
    int max_per_level = 50;
    PyramidOptions pyramid;
    bool skip_occluded_transforms = true;
    int workers = 1;
};

// Unary responses of one detector component on one pyramid level.
struct CachedLevel {
    int component = 0;
    int level = 0;
    LevelFrame frame;
    UnaryResponses unary;
};

// Pyramids and unary responses for every component. Reusable across models that
// differ only in biases and springs.
std::vector<CachedLevel> prepare_levels(const Detector& d, const Image& image, const PyramidOptions& opt,
                                        int workers = 1);

// Greedy by score; drops boxes whose IoU with a kept box exceeds `iou`.
std::vector<Detection> nms(std::vector<Detection> cands, double iou);

// Image-frame detection for a configuration on a level.
Detection make_detection(const Model& m, const Configuration& c, double score, const LevelFrame& frame,
                         double box_pad);

std::vector<Detection> detect(const Detector& d, const Image& image, const DetectOptions& opt = {});
std::vector<Detection> detect_cached(const Detector& d, const std::vector<CachedLevel>& levels,
                                     const DetectOptions& opt = {});

// Highest-scoring detection covering at least `min_overlap` of `box`; only
// components with `landmarks` points are considered when it is positive.
// Throws NotFoundError otherwise.
Detection localize_in_box(const Detector& d, const Image& image, const Box& box, const DetectOptions& opt = {},
                          double min_overlap = 0.7, int landmarks = 0);
Detection localize_cached(const Detector& d, const std::vector<CachedLevel>& levels, const Box& box,
                          const DetectOptions& opt = {}, double min_overlap = 0.7, int landmarks = 0);

nlohmann::json detection_to_json(const Detection& d);
Detection detection_from_json(const nlohmann::json& j);
std::string detections_to_jsonl(const std::vector<Detection>& ds);
std::vector<Detection> detections_from_jsonl(const std::string& text);

}  // namespace hpm
