#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "hpm/detection.hpp"
#include "hpm/evaluation.hpp"
#include "hpm/supervision.hpp"
#include "hpm/topology.hpp"
#include "hpm/training.hpp"

namespace hpm {

// Everything a CLI run needs besides its positional inputs. Paths are
// resolved against the config file's directory.
struct RunConfig {
    std::string topology = "face68";  // built-in name or JSON file
    std::string lowres_topology = "lowres7";
    std::string reference_shapes;  // JSON file; empty uses `views` yaw-rotated copies of the mean face
    int views = 2;
    double view_step = 15;
    double ipd = 48;

    int shapes = 3;
    int occlusions = 4;
    int virtual_positives = 8;

    int cell_size = 8;
    int template_size = 5;
    bool lowres = false;
    int lowres_cell_size = 4;
    int lowres_template_size = 7;

    double C = 0.002;
    double margin = 0.5;
    int rounds = 8;
    int negatives_per_image = 10;
    double tolerance = 1e-4;
    int max_passes = 5000;
    double spring_min = 0.01;

    std::vector<double> rotations = PyramidOptions::default_rotations();
    int levels_per_octave = 5;
    bool upsample = true;

    double threshold = 0;
    double nms_iou = 0.3;
    double box_pad = 0.1;
    int max_per_level = 50;
    bool skip_occluded_transforms = true;
    bool overlays = false;

    double min_overlap = 0.7;
    double success_threshold = 0.1;
    double detection_iou = 0.5;
    std::vector<double> alphas = {0, 0.5, 1, 2};
    std::vector<int> left_eye = EyeIndices::face68().left;
    std::vector<int> right_eye = EyeIndices::face68().right;

    uint64_t seed = 0;
    int workers = 0;  // 0 means default_workers()

    void validate() const;

    Topology load_topology() const;
    Topology load_lowres_topology() const;
    ReferenceShapeSet references() const;
    SupervisionOptions supervision() const;
    TrainingOptions training() const;
    DetectOptions detection() const;
    EyeIndices eyes() const { return {left_eye, right_eye}; }
    int effective_workers() const;
};

// Unknown keys, wrong types and out-of-range values raise ConfigError.
RunConfig config_from_json(const nlohmann::json& j, const std::string& base_dir = "");
nlohmann::json config_to_json(const RunConfig& c);
RunConfig load_config(const std::string& path);
// Hash of the canonical JSON dump.
std::string config_hash(const RunConfig& c);

}  // namespace hpm
