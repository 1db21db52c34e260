#pragma once

#include <array>
#include <string>
#include <vector>

#include "hpm/common.hpp"
#include "hpm/dataset.hpp"
#include "hpm/image.hpp"

namespace hpm {

// Faces drawn as oriented step-edge patches at 68 landmarks of a two-view model.
// Landmarks sit on HOG cell centres at native scale.
struct PlantedOptions {
    int width = 176, height = 176;
    int cell_size = 8;
    double ipd = 48;
    double yaw = 7.5;  // views at -yaw and +yaw, matching default_reference_set(2)
    double occluder_rate = 0.4;
    double part_jitter = 0.3;  // chance of moving a part by one cell
    int clutter = 10;          // distractor patches per image
    double patch_radius = 4.5;
    double contrast = 0.4;
    uint64_t seed = 0;
};

struct PlantedFace {
    Image image;
    AnnotatedFace face;
    int view = 0;
    bool occluder = false;
};

// Orientation of landmark k's patch in radians. Mirror pairs get reflected orientations.
double planted_orientation(int k);
// Draws patch k centred at (x, y).
void draw_planted_patch(Image& img, int k, double x, double y, double radius, double contrast);

// Landmark cells of a view, snapped so that no two landmarks share a cell and
// sized so that the snapped layout aligns with the projected face at unit scale.
// View 1 is the mirror image of view 0.
std::vector<std::array<int, 2>> planted_layout(const PlantedOptions& opt, int view);

PlantedFace render_planted_face(const PlantedOptions& opt, Rng& rng);
Image render_planted_negative(const PlantedOptions& opt, Rng& rng);

struct PlantedDataset {
    DatasetManifest train, test;
    std::vector<std::string> negatives;
    std::string train_manifest, test_manifest;
};

// Writes PNGs plus train.json and test.json manifests under `dir`.
PlantedDataset write_planted_dataset(const std::string& dir, const PlantedOptions& opt, int train, int test,
                                     int negatives, int workers = 1);

}  // namespace hpm
