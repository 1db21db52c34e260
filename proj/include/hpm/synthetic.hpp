#pragma once

#include <string>
#include <vector>

#include "hpm/common.hpp"
#include "hpm/dataset.hpp"
#include "hpm/hog.hpp"
#include "hpm/model.hpp"

namespace hpm {

struct RandomModelOptions {
    int parts = 2;
    int landmarks_per_part = 3;
    int views = 1;
    int shapes = 2;
    int occlusions = 2;
    int template_size = 3;
    double neg_inf_bias_prob = 0.2;
    int max_part_anchor = 2;
    int max_landmark_anchor = 1;
};

// Random tree-structured model with continuous weights, for oracle tests.
Model random_model(Rng& rng, const RandomModelOptions& opt = {});
FeatureLevel random_level(Rng& rng, int rows, int cols, int dim = kHogDim);
// Uniformly random configuration respecting the landmark/part state agreement.
Configuration random_configuration(Rng& rng, const ModelSpec& spec, int rows, int cols);

// 68-point mean face (x right, y down, z towards the viewer) with unit
// interpupillary distance, centred on the eye midpoint.
std::vector<std::array<double, 3>> mean_face68_3d();
// Orthographic projection after a yaw rotation, rescaled to the given IPD and centred at the origin.
std::vector<Point> project_face(const std::vector<std::array<double, 3>>& face, double yaw_deg, double ipd);

}  // namespace hpm
