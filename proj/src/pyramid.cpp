#include "hpm/pyramid.hpp"

#include <cmath>

#include "hpm/common.hpp"
#include "hpm/parallel.hpp"

namespace hpm {

std::vector<double> PyramidOptions::default_rotations() {
    std::vector<double> r;
    for (int d = -30; d <= 30; d += 6) r.push_back(d);
    return r;
}

std::array<double, 2> LevelFrame::cell_to_level_pixel(double gx, double gy) const {
    return {(gx + 1) * cell_size + (cell_size - 1) / 2.0, (gy + 1) * cell_size + (cell_size - 1) / 2.0};
}

std::array<double, 2> LevelFrame::cell_to_image(double gx, double gy) const {
    auto p = cell_to_level_pixel(gx, gy);
    double cxp = (p[0] + 0.5) / scale_x - 0.5, cyp = (p[1] + 0.5) / scale_y - 0.5;
    double t = degrees * M_PI / 180.0;
    double c = std::cos(t), s = std::sin(t);
    double dx = cxp - dst_cx, dy = cyp - dst_cy;
    return {src_cx + c * dx + s * dy, src_cy - s * dx + c * dy};
}

std::array<double, 2> LevelFrame::image_to_cell(double x, double y) const {
    double t = degrees * M_PI / 180.0;
    double c = std::cos(t), s = std::sin(t);
    double dx = x - src_cx, dy = y - src_cy;
    double cxp = dst_cx + c * dx - s * dy, cyp = dst_cy + s * dx + c * dy;
    double px = (cxp + 0.5) * scale_x - 0.5, py = (cyp + 0.5) * scale_y - 0.5;
    return {(px - (cell_size - 1) / 2.0) / cell_size - 1, (py - (cell_size - 1) / 2.0) / cell_size - 1};
}

std::vector<FeaturePyramid::Entry> build_track(const Image& image, const PyramidOptions& opt, int ri) {
    if (opt.levels_per_octave < 1) throw DomainError("levels_per_octave must be >= 1");
    RotatedImage rot = rotate_expand(image, opt.rotations.at(ri));
    const Image& base = rot.image;
    const int lpo = opt.levels_per_octave;
    const int first = opt.upsample ? 0 : lpo;
    std::vector<Image> images;
    std::vector<std::array<double, 3>> scales;  // nominal, x, y
    // The top two octaves are resampled from the source; the rest halve exactly.
    for (int i = first; int(images.size()) < opt.max_levels; ++i) {
        double sc = 2.0 * std::pow(2.0, -double(i) / lpo);
        Image img;
        std::array<double, 3> s;
        if (i < 2 * lpo) {
            if (i == lpo) {
                img = base;
            } else {
                int w = int(std::lround(base.width * sc)), h = int(std::lround(base.height * sc));
                if (w < 1 || h < 1) break;
                img = resize_bilinear(base, w, h);
            }
            s = {sc, double(img.width) / base.width, double(img.height) / base.height};
        } else {
            size_t src = size_t(i - lpo - first);
            img = downsample2(images[src]);
            s = {scales[src][0] / 2, scales[src][1] / 2, scales[src][2] / 2};
        }
        if (img.width < 2 * opt.cell_size || img.height < 2 * opt.cell_size) break;
        if (img.height / opt.cell_size - 2 < opt.min_rows || img.width / opt.cell_size - 2 < opt.min_cols) break;
        images.push_back(std::move(img));
        scales.push_back(s);
    }
    std::vector<FeaturePyramid::Entry> out(images.size());
    for (size_t i = 0; i < images.size(); ++i) {
        auto& e = out[i];
        e.features = compute_hog(images[i], opt.cell_size);
        e.features.scale = scales[i][0];
        e.features.rotation = opt.rotations[ri];
        e.frame.scale_x = scales[i][1];
        e.frame.scale_y = scales[i][2];
        e.frame.cell_size = opt.cell_size;
        e.frame.degrees = opt.rotations[ri];
        e.frame.src_cx = rot.src_cx;
        e.frame.src_cy = rot.src_cy;
        e.frame.dst_cx = rot.dst_cx;
        e.frame.dst_cy = rot.dst_cy;
        e.rotation_index = ri;
        e.level_index = int(i);
    }
    return out;
}

FeaturePyramid build_pyramid(const Image& image, const PyramidOptions& opt, int workers) {
    if (opt.rotations.empty()) throw DomainError("build_pyramid: no rotations");
    FeaturePyramid p;
    p.rotations = opt.rotations;
    p.levels_per_octave = opt.levels_per_octave;
    p.upsampled = opt.upsample;
    std::vector<std::vector<FeaturePyramid::Entry>> tracks(opt.rotations.size());
    parallel_for(int(tracks.size()), workers, [&](int r) { tracks[r] = build_track(image, opt, r); });
    for (auto& t : tracks)
        for (auto& e : t) p.levels.push_back(std::move(e));
    return p;
}

}  // namespace hpm
