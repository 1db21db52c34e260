#pragma once

#include <array>
#include <vector>

#include "hpm/hog.hpp"
#include "hpm/image.hpp"

namespace hpm {

struct PyramidOptions {
    int cell_size = 8;
    int levels_per_octave = 5;
    bool upsample = true;  // adds an octave at 2x
    std::vector<double> rotations = default_rotations();
    int min_rows = 1, min_cols = 1;  // smaller levels are dropped
    int max_levels = 1000;

    static std::vector<double> default_rotations();
};

// Level coordinates map back to the source image via the rotation canvas and scale.
struct LevelFrame {
    double scale_x = 1.0, scale_y = 1.0;
    int cell_size = 8;
    double degrees = 0;
    double src_cx = 0, src_cy = 0, dst_cx = 0, dst_cy = 0;

    std::array<double, 2> cell_to_image(double gx, double gy) const;
    std::array<double, 2> image_to_cell(double x, double y) const;
    std::array<double, 2> cell_to_level_pixel(double gx, double gy) const;
};

struct FeaturePyramid {
    struct Entry {
        FeatureLevel features;
        LevelFrame frame;
        int rotation_index = 0;
        int level_index = 0;
    };
    std::vector<double> rotations;
    std::vector<Entry> levels;
    int levels_per_octave = 5;
    bool upsampled = true;

    int num_rotations() const { return int(rotations.size()); }
};

FeaturePyramid build_pyramid(const Image& image, const PyramidOptions& opt, int workers = 1);

// Levels for one rotation track only.
std::vector<FeaturePyramid::Entry> build_track(const Image& image, const PyramidOptions& opt,
                                               int rotation_index);

}  // namespace hpm
