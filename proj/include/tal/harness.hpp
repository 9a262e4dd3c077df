#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tal/ingest.hpp"
#include "tal/localizer.hpp"
#include "tal/metrics.hpp"
#include "tal/postprocess.hpp"
#include "tal/types.hpp"
#include "tal/windowing.hpp"

namespace tal {

struct SynthBinSpec {
    int xs = 2, s = 2, m = 2, l = 2, xl = 3;
    int total() const { return xs + s + m + l + xl; }
};

struct SynthSpec {
    std::string name = "synthetic";
    int num_classes = 3;  // foreground classes; a NULL class is added on top
    int num_subjects = 5;
    int num_axes = 3;
    double sampling_rate = 30.0;
    double noise_stddev = 0.05;
    SynthBinSpec segments_per_subject;
    double gap_seconds_min = 2.0;
    double gap_seconds_max = 5.0;
    bool include_null = true;
    std::uint64_t seed = 7;
};

struct SyntheticDataset {
    DatasetManifest manifest;
    std::vector<SensorStream> streams;
};

// Per-class sinusoid-plus-offset signatures with Gaussian noise; labels are
// exact by construction. Segment lengths are drawn inside the requested bins.
SyntheticDataset make_synthetic_dataset(const SynthSpec& spec);
// Writes manifest.json plus one stream CSV per subject.
void write_synthetic_dataset(const SyntheticDataset& ds, const std::string& dir);

struct RunConfig {
    std::string manifest_path;
    WindowConfig window;
    LocalizerConfig localizer;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::string protocol = "offline";              // "offline" | "chunked"
    std::vector<double> chunk_seconds = {1, 5, 30, 60};
    std::vector<double> threshold_grid;            // default 0.05..0.5 step 0.05
    std::vector<double> majority_width_grid = {0.0};
    std::string feature_source = "raw";            // "raw" | "embeddings"
    int jobs = 1;
    std::string report_dir;
    Averaging averaging = Averaging::Macro;

    void validate() const;
    std::string to_json_string(int indent = 2) const;
    static RunConfig from_json_file(const std::string& path);
};

std::vector<double> default_threshold_grid();

// Dataset loaded into memory: streams, ground truth, and per-subject window
// sequences are derived per fold (normalization depends on the split).
struct Dataset {
    DatasetManifest manifest;
    std::vector<SensorStream> streams;            // manifest order
    std::vector<WindowSequence> embeddings;       // only in two-stage mode

    static Dataset load(const RunConfig& cfg);
    static Dataset from_memory(DatasetManifest manifest, std::vector<SensorStream> streams);
    const SensorStream& stream(const std::string& subject_id) const;
};

struct FoldResult {
    std::string subject;
    std::uint64_t seed = 0;
    bool diverged = false;
    std::string warning;
    std::vector<Segment> raw_segments;    // decoded, unthresholded, dataset class ids
    EvalReport report;
    std::shared_ptr<LocalizerModel> model;
    WindowSequence validation_windows;
    GroundTruth ground_truth;             // labels in dataset class ids
    std::vector<double> loss_curve;
};

struct PostprocessChoice {
    double threshold = 0.0;
    double majority_width_seconds = 0.0;
};

struct LosoResult {
    std::vector<FoldResult> folds;        // ordered by (seed, subject)
    PostprocessChoice postprocess;
    std::map<std::string, double> aggregate;                      // metric -> mean
    std::map<std::string, std::pair<double, double>> aggregate_std;  // mean, std over seeds
    std::vector<std::string> warnings;
};

// Full LOSO protocol: per (seed, split) train on the remaining subjects with
// training-fold normalization, predict the held-out subject offline, pick the
// confidence threshold (by avg mAP) and majority width (by F1) on the
// validation grid, then report all metrics.
LosoResult run_loso(const RunConfig& cfg, const Dataset& data);

struct ChunkSizeResult {
    double chunk_seconds = 0.0;   // <= 0 means unchunked
    std::map<std::string, double> aggregate;  // f1, c_map, map (+ report scalars)
    std::map<std::string, std::pair<double, double>> aggregate_std;
};

struct ChunkedResult {
    std::vector<ChunkSizeResult> per_chunk;
};

// Near-online protocol: validation streams are cut into fixed-length chunks,
// each predicted independently by the fold's trained model. c-mAP treats each
// chunk as its own sequence with clipped ground truth; the reconstructed
// stream is evaluated like the offline protocol.
ChunkedResult run_chunked(const RunConfig& cfg, const Dataset& data,
                          const LosoResult& loso);

// Chunk metrics of one fold; exposed for the offline-equivalence tests.
struct FoldChunkMetrics {
    double f1 = 0.0;
    double c_map = 0.0;
    double recon_map = 0.0;
    EvalReport recon_report;
};
FoldChunkMetrics evaluate_fold_chunked(const RunConfig& cfg, const Dataset& data,
                                       const FoldResult& fold, double chunk_seconds,
                                       const PostprocessChoice& choice);

PostprocessChoice grid_search_postprocess(const RunConfig& cfg, const Dataset& data,
                                          const std::vector<FoldResult>& folds,
                                          const std::vector<double>& thresholds,
                                          const std::vector<double>& widths);

// Mean and population standard deviation per scalar metric.
std::map<std::string, std::pair<double, double>> aggregate_seeds(
    const std::vector<std::map<std::string, double>>& per_seed);

// reports/<dataset>/<seed>/<subject>.json + summary.json + summary.csv.
void write_reports(const std::string& dir, const RunConfig& cfg, const Dataset& data,
                   const LosoResult& loso, const ChunkedResult* chunked = nullptr);
std::string summary_json_string(const RunConfig& cfg, const Dataset& data,
                                const LosoResult& loso,
                                const ChunkedResult* chunked = nullptr);
std::string summary_csv_string(const LosoResult& loso,
                               const ChunkedResult* chunked = nullptr);

// Dataset class id <-> localizer foreground class index.
int to_model_class(int dataset_label, bool has_null);
int to_dataset_class(int model_label, bool has_null);

}  // namespace tal
