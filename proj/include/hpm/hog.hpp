#pragma once

#include <array>
#include <vector>

#include "hpm/image.hpp"

namespace hpm {

inline constexpr int kHogDim = 31;

struct GridLoc {
    int y = 0, x = 0;
    bool operator==(const GridLoc&) const = default;
};

// Grid of HOG cells. Cell (y, x) is centred on level pixel
// ((x + 1) * cell + (cell - 1) / 2, (y + 1) * cell + (cell - 1) / 2).
struct FeatureLevel {
    int rows = 0, cols = 0, dim = kHogDim;
    int cell_size = 8;
    double scale = 1.0;     // level pixels per canvas pixel
    double rotation = 0.0;  // degrees
    std::vector<float> cells;  // (y, x, d) row-major

    const float* cell(int y, int x) const { return cells.data() + (size_t(y) * cols + x) * dim; }
    float* cell(int y, int x) { return cells.data() + (size_t(y) * cols + x) * dim; }
    bool contains(GridLoc l) const { return l.y >= 0 && l.y < rows && l.x >= 0 && l.x < cols; }
};

FeatureLevel compute_hog(const Image& image, int cell_size);

// Flattened h*w*dim patch centred at loc (top-left at loc - (h/2, w/2)); cells
// outside the grid read as zero.
std::vector<double> extract_patch(const FeatureLevel& level, GridLoc loc, int h, int w);

// Channel permutation induced by a horizontal image flip.
const std::array<int, kHogDim>& hog_flip_permutation();

// Column reversal plus channel permutation.
FeatureLevel flip_level(const FeatureLevel& level);

// Flips a template stored as h*w*dim row-major.
std::vector<double> flip_template(const std::vector<double>& t, int h, int w);

}  // namespace hpm
