#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tal/types.hpp"
#include "tal/windowing.hpp"

namespace tal {

// Training aborted on a non-finite loss.
struct TrainingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LocalizerConfig {
    int hidden_dim = 64;
    int pyramid_levels = 4;
    int head_layers = 2;  // kernel-3 conv layers per head before the affine
    // Per-level [min, max) assignment ranges in window units; empty selects
    // doubling defaults ([0,4),[4,8),...,[.,inf)).
    std::vector<std::pair<double, double>> regression_ranges;
    double focal_gamma = 2.0;
    double focal_alpha = 0.25;
    double reg_loss_weight = 1.0;
    double learning_rate = 1e-4;
    double momentum = 0.9;
    double weight_decay = 1e-6;
    double lr_decay_factor = 1.0;  // per-interval multiplier; 1 = constant
    int lr_decay_interval = 10;    // epochs
    int epochs = 100;
    std::uint64_t seed = 1;
    double decode_epsilon = 1e-3;

    std::vector<std::pair<double, double>> effective_ranges() const;
    void validate() const;
};

struct PyramidPoint {
    int level = 0;
    int index_in_level = 0;
    double timestamp = 0.0;  // window units, center of the covered windows
    int stride = 1;          // 2^level
};

// Assignment target for one pyramid point; class_id -1 means background, in
// which case the distances are undefined and unused.
struct PointTarget {
    static constexpr int kBackground = -1;
    int class_id = kBackground;
    double d_start = 0.0;
    double d_end = 0.0;
};

struct ParamBlock {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<double> velocity;
    std::size_t size() const { return value.size(); }
};

struct ForwardOutput {
    std::vector<PyramidPoint> points;
    std::vector<SeqLabel> labels;  // parallel to points
};

struct TrainSample {
    const WindowSequence* windows = nullptr;
    std::vector<Segment> gt_segments;  // window units
};

struct TrainResult {
    std::vector<double> epoch_mean_loss;
};

struct GradCheckBlock {
    std::string name;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckBlock> blocks;
    double max_rel_error = 0.0;
};

// Binary focal loss summed over foreground classes; target_class -1 treats
// every class as a negative. Probabilities are clamped at 1e-7.
double focal_loss(const std::vector<double>& class_probs, int target_class,
                  double gamma, double alpha);

// 1-D GIoU between intervals sharing the anchor timestamp, parameterized by
// onset/offset distances. A degenerate target (both zero) costs 0.
double giou_loss_1d(double pred_d_start, double pred_d_end, double target_d_start,
                    double target_d_end);

// A point is positive for a segment when its timestamp lies inside [s, e) and
// max(t-s, e-t) falls in its level's range; the shortest segment wins ties.
std::vector<PointTarget> assign_targets(
    const std::vector<PyramidPoint>& points, const std::vector<Segment>& gt,
    const std::vector<std::pair<double, double>>& level_ranges);

// Anchor-free single-stage localizer: affine projection with ReLU, stride-2
// max-pooling pyramid, and shared kernel-3 convolutional classification and
// regression heads applied at every level.
class LocalizerModel {
  public:
    LocalizerModel(int input_dim, int num_fg_classes, LocalizerConfig cfg);

    int input_dim() const { return input_dim_; }
    int num_fg_classes() const { return num_fg_classes_; }
    const LocalizerConfig& config() const { return cfg_; }

    std::vector<ParamBlock>& param_blocks() { return blocks_; }
    const std::vector<ParamBlock>& param_blocks() const { return blocks_; }

    std::vector<PyramidPoint> pyramid_points(std::size_t num_windows) const;
    ForwardOutput forward(const WindowSequence& ws) const;

    // Loss of one full sequence; accumulates analytic gradients into the
    // parameter blocks when requested.
    double sequence_loss(const TrainSample& sample, bool with_grad);
    void zero_grad();
    void sgd_step(double lr_scale = 1.0);

    void save(const std::string& path) const;
    static LocalizerModel load(const std::string& path);

    // Checkpoints carry the windowing context so `predict` can reproduce the
    // training-time features.
    WindowConfig window_config;
    NormStats norm_stats;

  private:
    struct Activations;
    void run_forward(const Matrix& features, Activations& acts) const;

    int input_dim_;
    int num_fg_classes_;
    LocalizerConfig cfg_;
    std::vector<std::pair<double, double>> ranges_;
    std::vector<ParamBlock> blocks_;

    // Block indices in declaration (= checkpoint) order.
    int proj_w_, proj_b_;
    std::vector<int> cls_conv_w_, cls_conv_b_, reg_conv_w_, reg_conv_b_;
    int cls_out_w_, cls_out_b_, reg_out_w_, reg_out_b_;
};

TrainResult train(LocalizerModel& model, const std::vector<TrainSample>& samples);

// Eq.-style decode: every (point, class) with probability >= epsilon emits
// Segment(t - d_start, t + d_end, class, prob), clipped to [0, t_max].
std::vector<Segment> decode(const ForwardOutput& output, double t_max,
                            double epsilon = 1e-3);

// Central finite differences (step h) against the analytic gradients; the
// reported error is |a-b| / max(|a|, |b|, 0.01) per parameter.
GradCheckReport check_gradients(LocalizerModel& model, const TrainSample& sample,
                                double step = 1e-4);

}  // namespace tal
