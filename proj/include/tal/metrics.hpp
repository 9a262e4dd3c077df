#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tal/postprocess.hpp"
#include "tal/types.hpp"

namespace tal {

struct GroundTruth;

enum class Averaging { Macro, Weighted };

// Per-sample classification metrics. Percentages; macro averages run over
// classes present in the ground truth. Missing values (class absent, no null
// class) are NaN.
struct SampleMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::vector<double> per_class_precision;
    std::vector<double> per_class_recall;
    std::vector<double> per_class_f1;
    std::vector<double> per_class_accuracy;   // recall per class
    double null_accuracy = 0.0;
    std::vector<std::vector<long long>> confusion;  // rows = ground truth
};

SampleMetrics sample_metrics(const SampleTimeline& pred, const SampleTimeline& gt,
                             int num_classes, std::optional<int> null_class,
                             Averaging averaging = Averaging::Macro);

// Frame-level misalignment ratios, percentages of total frames, micro-summed
// across all non-null classes (one-vs-rest events).
struct WardRatios {
    double underfill = 0.0;      // UR
    double overfill = 0.0;       // OR
    double deletion = 0.0;       // DR
    double insertion = 0.0;      // IR
    double fragmentation = 0.0;  // FR
    double merge = 0.0;          // MR
};

WardRatios ward_errors(const SampleTimeline& pred, const SampleTimeline& gt,
                       int num_classes, std::optional<int> null_class);

// Detection AP for one class over one sequence. Predictions are ranked by
// score (ties: earlier start first) and greedily matched to the unmatched
// ground-truth segment with the highest tIoU; a match is a true positive iff
// tIoU >= threshold. Area under the interpolated precision envelope.
double average_precision(const std::vector<Segment>& preds,
                         const std::vector<Segment>& gt, double tiou_threshold);

struct MapResult {
    std::vector<std::pair<double, double>> per_tiou;  // (threshold, mAP * 100)
    double avg = 0.0;                                 // * 100
};

inline const std::vector<double>& default_tiou_thresholds() {
    static const std::vector<double> t = {0.3, 0.4, 0.5, 0.6, 0.7};
    return t;
}

// Mean AP over classes with at least one ground-truth instance anywhere in
// the set. Each map key is an independent sequence: predictions are pooled
// into one ranking per class but never match another sequence's ground truth.
MapResult map_suite(const SegmentSet& preds, const SegmentSet& gts,
                    const std::vector<double>& thresholds = default_tiou_thresholds());

struct LengthBinCounts {
    long long xs = 0;  // (0, 3] s
    long long s = 0;   // (3, 6] s
    long long m = 0;   // (6, 12] s
    long long l = 0;   // (12, 18] s
    long long xl = 0;  // > 18 s
};

LengthBinCounts length_bins(const std::vector<Segment>& segments, int stride_samples,
                            double sampling_rate);
LengthBinCounts length_bins_seconds(const std::vector<double>& durations_seconds);

// All metrics for one evaluated sequence set.
struct EvalReport {
    std::string subject;
    std::uint64_t seed = 0;
    std::string protocol = "offline";
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    std::vector<double> per_class_accuracy;
    double null_accuracy = 0.0;
    std::vector<std::vector<long long>> confusion;
    WardRatios ward;
    std::vector<std::pair<double, double>> map_per_tiou;
    double avg_map = 0.0;
    LengthBinCounts length_bin_counts;  // of the predicted segments
    double threshold = 0.0;
    double majority_width_seconds = 0.0;
    bool validation_optimized = false;

    // Scalar view used for aggregation; keys are stable.
    std::map<std::string, double> scalars() const;
    std::string to_json_string(int indent = 2) const;
    std::string confusion_csv() const;
};

EvalReport build_report(const SampleTimeline& pred_timeline,
                        const std::vector<Segment>& pred_segments,
                        const GroundTruth& gt, int num_classes,
                        std::optional<int> null_class, int stride_samples,
                        double sampling_rate,
                        const std::vector<double>& thresholds = default_tiou_thresholds(),
                        Averaging averaging = Averaging::Macro);

}  // namespace tal
