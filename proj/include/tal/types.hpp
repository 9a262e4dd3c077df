#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tal {

// Malformed user input: files, arguments, degenerate values. The CLI maps
// this to exit code 1; everything else is an internal error (exit 2).
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Row-major dense matrix of doubles. Small enough on purpose; all shapes in
// this library are (time x channels) and fit comfortably in memory.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
    bool empty() const { return rows == 0 || cols == 0; }
};

// One subject's raw multi-axis recording with per-sample labels.
struct SensorStream {
    std::string subject_id;
    double sampling_rate = 0.0;       // samples/second
    std::vector<std::string> axes;    // length S
    Matrix samples;                   // T_raw x S
    std::vector<int> labels;          // length T_raw, class ids

    std::size_t num_samples() const { return samples.rows; }
    std::size_t num_axes() const { return samples.cols; }
    void validate(int num_classes) const;
};

struct SubjectEntry {
    std::string id;
    std::string stream_path;
    std::string embeddings_path;      // optional, two-stage mode
};

struct DatasetManifest {
    std::string name;
    std::vector<std::string> class_names;   // index == class id
    std::optional<int> null_class;          // always 0 when present (loaders remap)
    double sampling_rate = 0.0;
    std::vector<std::string> axes;
    std::vector<SubjectEntry> subjects;

    int num_classes() const { return static_cast<int>(class_names.size()); }
    bool has_null() const { return null_class.has_value(); }
    int class_id(const std::string& name) const;   // throws InputError if unknown
    const SubjectEntry& subject(const std::string& id) const;
    void validate() const;
};

// Ordered per-window feature vectors plus the window -> raw-sample mapping.
struct WindowSequence {
    std::string subject_id;
    int window_size = 0;                    // W, samples
    int stride = 0;                         // samples
    Matrix features;                        // T x D
    std::vector<long long> window_starts;   // raw sample index per window
    long long total_samples = 0;            // T_raw of the originating stream

    std::size_t size() const { return features.rows; }
    std::size_t dim() const { return features.cols; }
    void validate() const;
};

// Half-open [start, end) in window-index units. Scores live in [0, 1];
// ground-truth segments carry score 1.0.
struct Segment {
    double start = 0.0;
    double end = 0.0;
    int label = 0;
    double score = 1.0;

    double length() const { return end - start; }
};

struct SampleTimeline {
    std::vector<int> labels;         // length T_raw
    double sampling_rate = 0.0;

    std::size_t size() const { return labels.size(); }
};

// Per-timestamp sequence label: per-class probabilities plus distances to the
// enclosing segment's onset/offset, in window units.
struct SeqLabel {
    std::vector<double> class_probs;  // length C_fg, per-class sigmoid outputs
    double d_start = 0.0;
    double d_end = 0.0;
    double timestamp = 0.0;           // window units
    int level_stride = 1;             // 2^level
};

struct SampleRange {
    long long begin = 0;
    long long end = 0;                // half-open
    long long length() const { return end - begin; }
};

// Temporal IoU of two 1-D intervals; 0 when disjoint. Degenerate intervals
// (start >= end) are rejected.
double tiou(double a_start, double a_end, double b_start, double b_end);
double tiou(const Segment& a, const Segment& b);

// Maps window-unit boundaries onto the union of the covered windows' sample
// spans: [round(start*stride), round(end*stride) + (W - stride)), clipped to
// [0, T_raw). Rounding is half-away-from-zero.
SampleRange segment_to_sample_range(const Segment& seg, const WindowSequence& ws);

inline long long round_half_away(double x) { return std::llround(x); }

}  // namespace tal
