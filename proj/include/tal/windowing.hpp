#pragma once

#include <vector>

#include "tal/types.hpp"

namespace tal {

struct WindowConfig {
    double window_seconds = 1.0;
    double overlap_fraction = 0.5;    // in [0, 1)
    bool normalize = true;
    bool axis_major = false;          // false: sample-major concatenation

    int window_samples(double sampling_rate) const;
    int stride_samples(double sampling_rate) const;
};

// Per-axis mean / standard deviation, computed on training subjects only.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

NormStats compute_norm_stats(const std::vector<const SensorStream*>& streams);

// Flattens a W x S window to length W*S. Sample-major: all S axis values of
// sample 1, then sample 2, ... Axis-major concatenates whole axis columns
// instead. Both orders are lossless.
std::vector<double> vectorize(const Matrix& window, bool axis_major = false);
Matrix devectorize(const std::vector<double>& vec, std::size_t window_size,
                   std::size_t num_axes, bool axis_major = false);

// Slides a window of round(window_seconds * rate) samples with stride
// round(W * (1 - overlap)); trailing samples that do not fill a window are
// dropped. Normalization statistics, when given, must come from the training
// fold; with cfg.normalize and no stats the stream's own statistics are used.
WindowSequence make_windows(const SensorStream& stream, const WindowConfig& cfg,
                            const NormStats* stats = nullptr);

// Most frequent sample label inside the window; ties resolve to the label of
// the window's center sample.
int window_majority_label(const SensorStream& stream, std::size_t window_index,
                          const WindowConfig& cfg);

}  // namespace tal
