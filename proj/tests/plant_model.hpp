#pragma once

#include <cmath>

#include "hpm/hog.hpp"
#include "hpm/planted.hpp"
#include "hpm/training.hpp"

namespace hpm::testing {

// Frontal planted faces with no jitter or occluders.
inline PlantedOptions plain_plant_options() {
    PlantedOptions o;
    o.yaw = 0;
    o.part_jitter = 0;
    o.occluder_rate = 0;
    return o;
}

inline Supervision single_example(const std::vector<Point>& landmarks) {
    Supervision s;
    s.topology = face68_topology();
    s.patterns.assign(s.topology.num_parts(), {{0}});
    SupervisedExample ex;
    ex.landmarks = landmarks;
    ex.occluded.assign(landmarks.size(), 0);
    ex.part_shape.assign(s.topology.num_parts(), 0);
    ex.part_occ.assign(s.topology.num_parts(), 0);
    s.examples.push_back(ex);
    return s;
}

// Frame in which canonical coordinates are image pixels.
inline CanonicalFrame image_frame(const Image& img, int cell) {
    CanonicalFrame f;
    f.cell_size = cell;
    f.width = img.width;
    f.height = img.height;
    return f;
}

inline Configuration plant_configuration(const Model& m, const PlantedFace& f, const FeatureLevel& level) {
    auto s = single_example(f.face.landmarks);
    return example_configuration(m.spec, s, s.examples[0], image_frame(f.image, m.spec.cell_size), level.rows,
                                 level.cols);
}

// One-state model whose templates are the unit-normalized HOG patches of a rendered face.
inline Model template_model(uint64_t seed) {
    PlantedOptions o = plain_plant_options();
    o.clutter = 0;
    Rng rng(seed);
    PlantedFace f = render_planted_face(o, rng);
    FeatureLevel lv = compute_hog(f.image, o.cell_size);
    auto s = single_example(f.face.landmarks);
    ModelSpec spec = build_model_spec(s, image_frame(f.image, o.cell_size), ComponentSpec{});
    Model m(spec, 0.05);
    Configuration c = plant_configuration(m, f, lv);
    for (int k = 0; k < spec.topology.num_landmarks; ++k) {
        auto p = extract_patch(lv, c.landmarks[k].loc, spec.template_rows, spec.template_cols);
        double n = 0;
        for (double v : p) n += v * v;
        n = std::sqrt(n);
        const size_t off = m.layout.appearance(k, 0);
        for (size_t i = 0; i < p.size(); ++i) m.w[off + i] = n > 0 ? p[i] / n : 0.0;
    }
    return m;
}

}  // namespace hpm::testing
