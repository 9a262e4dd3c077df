#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tal/types.hpp"

namespace tal {

// Per-subject annotation truth: segments in window units (score 1.0) plus the
// sample-level timeline they rasterize to.
struct GroundTruth {
    std::string subject_id;
    std::vector<Segment> segments;
    SampleTimeline timeline;
};

struct LosoSplit {
    std::string validation_subject;
    std::vector<std::string> training_subjects;
};

// Manifest JSON: { name, class_names, null_class?, sampling_rate, axes,
// subjects: [{id, stream, embeddings?}] }. Relative paths resolve against the
// manifest directory. When a null class is declared it is remapped to id 0.
DatasetManifest load_manifest(const std::string& path);

// Stream CSV: header `sample_index,<axis...>,label`, one row per sample,
// labels as class-name strings.
SensorStream load_stream(const DatasetManifest& manifest, const std::string& subject_id);
void write_stream_csv(const std::string& path, const SensorStream& stream,
                      const DatasetManifest& manifest);

// Maximal constant-label runs with label != null become segments with
// boundaries in window units (start = first_sample/stride,
// end = (last_sample+1)/stride) and score 1.0.
std::vector<Segment> labels_to_segments(const SampleTimeline& timeline,
                                        int stride_samples,
                                        std::optional<int> null_class);

GroundTruth build_ground_truth(const SensorStream& stream, int stride_samples,
                               std::optional<int> null_class);

// One split per subject, in manifest order. Requires >= 2 subjects.
std::vector<LosoSplit> loso_splits(const DatasetManifest& manifest);

// External embeddings, one feature row per window. CSV (plain numeric rows)
// or raw little-endian float32 with a 12-byte header (u32 rows, u32 dims,
// u32 FNV-1a hash of the subject id).
WindowSequence load_embeddings(const std::string& path, const std::string& subject_id,
                               int window_size, int stride_samples,
                               long long expected_windows = -1);
void write_embeddings_csv(const std::string& path, const WindowSequence& ws);
void write_embeddings_binary(const std::string& path, const WindowSequence& ws);

std::uint32_t fnv1a32(const std::string& text);

}  // namespace tal
