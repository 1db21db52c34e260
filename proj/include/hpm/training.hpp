#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hpm/image.hpp"
#include "hpm/model.hpp"
#include "hpm/model_io.hpp"
#include "hpm/pyramid.hpp"
#include "hpm/supervision.hpp"

namespace hpm {

// One SVM constraint: sign * w.x >= margin - slack(group).
struct Constraint {
    FeatureVector x;
    double margin = 1.0;
    double sign = 1.0;
    int64_t group = 0;
    double delta = 0.0;  // occlusion loss of a negative
    double alpha = 0.0;  // dual variable, kept for warm starts
    double sqnorm = -1.0;
};

// 1/2 |w|^2 + C * sum over groups of the largest violation in the group.
// Sentinel entries of w are not regularized.
double svm_objective(const std::vector<double>& w, const std::vector<Constraint>& cs, double C);

struct SolverOptions {
    double C = 0.002;
    double tolerance = 1e-6;  // relative duality gap
    int max_passes = 5000;
    uint64_t seed = 0;
};

struct SolverResult {
    std::vector<double> w;
    double primal = 0, dual = 0;
    int passes = 0;
    std::vector<double> trace;  // primal at the warm start, then after every pass
};

// Dual coordinate ascent with pairwise steps inside shared-slack groups.
// Throws ConvergenceError carrying the trace when the pass cap is reached.
SolverResult solve_svm(size_t dim, std::vector<Constraint>& cs, const SolverOptions& opt);

// Sets quadratic spring weights above -eps to -eps.
void project_springs(Model& m, double eps = 0.01);

// Geometry of the canonical training crop.
struct CanonicalFrame {
    double scale = 1.0;  // crop pixels per canonical unit
    int cell_size = 8;
    int width = 0, height = 0;
    double origin_x = 0, origin_y = 0;  // crop position of canonical (0, 0)

    std::array<double, 2> to_cell(const Point& canonical) const;
    GridLoc to_grid(const Point& canonical) const;
    // Image -> crop pixels for an example normalized by `t`.
    Similarity crop_transform(const Similarity& t) const;
};

// Frame large enough for every example with `margin_cells` of slack on each side.
CanonicalFrame canonical_frame(const Supervision& s, double scale, int cell_size, int margin_cells);

struct ComponentSpec {
    int cell_size = 8;
    int template_size = 5;
    double scale = 1.0;
    std::string mixture = "full";
};

// Anchors are rounded mean grid offsets of the supervised examples.
ModelSpec build_model_spec(const Supervision& s, const CanonicalFrame& frame, const ComponentSpec& c);

// Grid configuration of a supervised example inside the canonical crop.
Configuration example_configuration(const ModelSpec& spec, const Supervision& s, const SupervisedExample& ex,
                                    const CanonicalFrame& frame, int rows, int cols);

struct MinedNegative {
    Configuration config;
    double augmented = kNegInf;  // score - m * delta
    double delta = 0;
};

// -w.x >= 1 - m * delta - slack(group).
Constraint negative_constraint(FeatureVector x, double delta, double loss_margin, int64_t group);

// Best loss-augmented configuration on one level; `feasible` is false when none exists.
bool mine_level(const Model& m, const FeatureLevel& level, double loss_margin, MinedNegative& out);

struct TrainingOptions {
    double C = 0.002;
    double margin = 0.5;
    int rounds = 8;
    int negatives_per_image = 10;
    double tolerance = 1e-4;
    int max_passes = 5000;
    double spring_min = 0.01;
    uint64_t seed = 0;
    int workers = 1;
    int template_size = 5;
    int cell_size = 8;
    bool lowres = false;
    int lowres_template_size = 7;
    int lowres_cell_size = 4;
    PyramidOptions pyramid;
    std::string log_path;        // CSV, one row per round
    std::string checkpoint_dir;  // detector file per round
};

struct RoundLog {
    int round = 0;
    int positives = 0;
    int negatives = 0;
    int new_constraints = 0;
    double start_objective = 0;  // warm start on this round's constraints
    double objective = 0;
    double dual = 0;
    int passes = 0;
};

struct TrainingResult {
    Detector detector;
    std::vector<RoundLog> log;
};

// Images are read from example paths; `lowres` may be null.
TrainingResult train(const Supervision& full, const Supervision* lowres, const std::vector<std::string>& negatives,
                     const TrainingOptions& opt);

std::string training_log_csv(const std::vector<RoundLog>& log);

}  // namespace hpm
