#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tal/types.hpp"

namespace tal {

struct DatasetManifest;

// Keeps segments with score >= theta, preserving order.
std::vector<Segment> threshold_segments(const std::vector<Segment>& segments,
                                        double theta);

// Paints segments onto a sample timeline over a NULL background (class 0 when
// no null class exists). Segments are painted in ascending score order
// (ties: earlier start, then lower class id), so the highest score wins every
// overlap. Window units map linearly to samples: [round(s*stride),
// round(e*stride)).
SampleTimeline rasterize_segments(const std::vector<Segment>& segments,
                                  const WindowSequence& ws, long long t_raw,
                                  std::optional<int> null_class);

// Window-model path: window t paints samples [t*stride, t*stride + W); later
// windows overwrite the overlap and trailing samples inherit the last label.
SampleTimeline rasterize_windows(const std::vector<int>& window_predictions,
                                 const WindowSequence& ws, long long t_raw);

// Centered sliding majority vote of k = 2*floor(width*rate/2)+1 samples.
// Ties keep the input label; boundaries use truncated windows.
SampleTimeline majority_filter(const SampleTimeline& timeline, double width_seconds);

// Maximal non-null runs as score-1.0 segments in window units.
std::vector<Segment> timeline_to_segments(const SampleTimeline& timeline,
                                          int stride_samples,
                                          std::optional<int> null_class);

// Majority-filter width presets (seconds) keyed by dataset name.
const std::map<std::string, double>& default_majority_widths();

// Segment interchange CSV: subject_id,start_window,end_window,label,score.
using SegmentSet = std::map<std::string, std::vector<Segment>>;
void write_segments_csv(const std::string& path, const SegmentSet& segments,
                        const DatasetManifest& manifest);
SegmentSet read_segments_csv(const std::string& path, const DatasetManifest& manifest);

}  // namespace tal
