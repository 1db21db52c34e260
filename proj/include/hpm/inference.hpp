#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "hpm/common.hpp"
#include "hpm/hog.hpp"
#include "hpm/model.hpp"

namespace hpm {

// Template correlations for every (landmark, shape state) at every grid cell.
struct UnaryResponses {
    int rows = 0, cols = 0;
    int num_landmarks = 0, num_states = 0;
    Eigen::MatrixXd values;  // (rows*cols) x (num_landmarks*num_states)

    const double* grid(int k, int s) const {
        return values.data() + size_t(k * num_states + s) * size_t(rows) * cols;
    }
};

UnaryResponses compute_unary_responses(const Model& m, const FeatureLevel& level);

struct InferOptions {
    double loss_margin = 0.0;  // m: occluded landmarks pay m / N_l each
    bool skip_occluded_transforms = true;
};

struct InferStats {
    long landmark_transforms = 0;
    long part_transforms = 0;
};

// Smallest grid the model fits in under some uniform shape state.
std::pair<int, int> model_extent(const ModelSpec& spec);

// Message tables for one level. Channels are indexed c = s * O + o.
class MessageTables {
public:
    MessageTables(const Model& m, const UnaryResponses& unary, const InferOptions& opt);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    const InferStats& stats() const { return stats_; }

    // Best objective per root location (root offset included) and its channel.
    const std::vector<double>& root_scores() const { return root_best_; }
    const std::vector<int>& root_channels() const { return root_channel_; }
    // Accumulated score grid of a part for channel c (root: without root offset).
    const double* part_score(int part, int c) const { return acc_[part].data() + size_t(c) * cells_; }

    Configuration backtrack(GridLoc root) const;
    Configuration backtrack(GridLoc root, int channel) const;

private:
    const Model* model_;
    int rows_, cols_;
    size_t cells_;
    int channels_;
    InferStats stats_;
    std::vector<std::vector<double>> acc_;
    std::vector<std::vector<int>> nu_arg_, mu_arg_, lm_arg_;
    std::vector<double> root_best_;
    std::vector<int> root_channel_;
};

struct InferenceResult {
    bool empty = false;  // level too small for the model
    bool feasible = false;
    std::string reason;
    double score = kNegInf;  // objective at the optimum (loss-augmented when m > 0)
    Configuration best;
    int rows = 0, cols = 0;
    std::vector<double> root_scores;
    InferStats stats;
};

InferenceResult infer(const Model& m, const FeatureLevel& level, const InferOptions& opt = {});
InferenceResult infer_with_unary(const Model& m, const UnaryResponses& unary, const InferOptions& opt = {});

// Exhaustive enumeration over part states; each landmark is maximised by brute
// force. Refuses instances with more than `limit` joint part states.
InferenceResult infer_naive(const Model& m, const FeatureLevel& level, double loss_margin = 0.0,
                            double limit = 1e8);

}  // namespace hpm
