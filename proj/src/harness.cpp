#include "tal/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace tal {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

// Box-Muller; the standard normal_distribution is not bit-stable across
// library implementations.
double gaussian(std::mt19937_64& rng) {
    const double u1 = 1.0 - static_cast<double>(rng() >> 11) * 0x1.0p-53;  // (0, 1]
    const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

struct ClassSignature {
    double offset = 0.0;
    double amp = 0.0;
    double freq = 0.0;
    double phase = 0.0;
};

// Deterministic, well-separated per-(class, axis) signal parameters.
ClassSignature signature(int fg_class, int axis) {
    ClassSignature s;
    const double sign = ((fg_class * 31 + axis * 17 + 7) % 2) ? 1.0 : -1.0;
    const double mag = 0.6 * (1 + (fg_class * 13 + axis * 5) % 3);
    s.offset = sign * mag;
    s.amp = 0.5;
    s.freq = 0.8 + 0.6 * fg_class + 0.15 * axis;
    s.phase = 0.7 * axis;
    return s;
}

}  // namespace

int to_model_class(int dataset_label, bool has_null) {
    return has_null ? dataset_label - 1 : dataset_label;
}

int to_dataset_class(int model_label, bool has_null) {
    return has_null ? model_label + 1 : model_label;
}

SyntheticDataset make_synthetic_dataset(const SynthSpec& spec) {
    if (spec.num_classes < 1 || spec.num_subjects < 1 || spec.num_axes < 1)
        throw InputError("make_synthetic_dataset: classes, subjects, axes must be >= 1");
    if (spec.sampling_rate <= 0.0)
        throw InputError("make_synthetic_dataset: sampling rate must be positive");
    if (spec.segments_per_subject.total() < 1)
        throw InputError("make_synthetic_dataset: at least one segment per subject");

    SyntheticDataset ds;
    ds.manifest.name = spec.name;
    if (spec.include_null) {
        ds.manifest.class_names.push_back("null");
        ds.manifest.null_class = 0;
    }
    for (int c = 0; c < spec.num_classes; ++c)
        ds.manifest.class_names.push_back("act_" + std::string(1, static_cast<char>('a' + c % 26)) +
                                          (c >= 26 ? std::to_string(c / 26) : ""));
    ds.manifest.sampling_rate = spec.sampling_rate;
    for (int a = 0; a < spec.num_axes; ++a)
        ds.manifest.axes.push_back("axis_" + std::to_string(a));

    // Bin edges chosen inside the duration bins so rounding keeps them there.
    struct BinRange {
        double lo, hi;
        int count;
    };

    for (int subj = 0; subj < spec.num_subjects; ++subj) {
        std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ull + subj + 1);
        const std::string id = "subj_" + std::to_string(subj + 1);
        ds.manifest.subjects.push_back({id, "", ""});

        const auto& bins = spec.segments_per_subject;
        const std::vector<BinRange> ranges = {{2.4, 3.0, bins.xs},
                                              {4.0, 5.5, bins.s},
                                              {7.5, 11.0, bins.m},
                                              {13.0, 17.0, bins.l},
                                              {19.5, 24.0, bins.xl}};
        // Classes rotate within each bin so every class covers every duration
        // bin as evenly as the counts allow.
        std::vector<std::pair<double, int>> events;
        for (std::size_t b = 0; b < ranges.size(); ++b)
            for (int i = 0; i < ranges[b].count; ++i)
                events.emplace_back(uniform(rng, ranges[b].lo, ranges[b].hi),
                                    static_cast<int>(b + i + subj) % spec.num_classes);
        // Fisher-Yates so long and short segments interleave in the timeline.
        for (std::size_t i = events.size(); i > 1; --i)
            std::swap(events[i - 1], events[rng() % i]);
        std::vector<double> durations;
        std::vector<int> classes;
        for (const auto& [d, c] : events) {
            durations.push_back(d);
            classes.push_back(c);
        }

        std::vector<int> labels;
        std::vector<int> fg_of_sample;  // -1 for NULL
        auto push_gap = [&]() {
            if (!spec.include_null) return;
            const long long n =
                round_half_away(uniform(rng, spec.gap_seconds_min, spec.gap_seconds_max) *
                                spec.sampling_rate);
            for (long long i = 0; i < n; ++i) {
                labels.push_back(0);
                fg_of_sample.push_back(-1);
            }
        };
        push_gap();
        for (std::size_t k = 0; k < durations.size(); ++k) {
            const long long n = round_half_away(durations[k] * spec.sampling_rate);
            const int dataset_label = spec.include_null ? classes[k] + 1 : classes[k];
            for (long long i = 0; i < n; ++i) {
                labels.push_back(dataset_label);
                fg_of_sample.push_back(classes[k]);
            }
            push_gap();
        }

        SensorStream stream;
        stream.subject_id = id;
        stream.sampling_rate = spec.sampling_rate;
        stream.axes = ds.manifest.axes;
        stream.samples = Matrix(labels.size(), spec.num_axes);
        stream.labels = labels;
        for (std::size_t t = 0; t < labels.size(); ++t) {
            const double sec = static_cast<double>(t) / spec.sampling_rate;
            for (int a = 0; a < spec.num_axes; ++a) {
                double v = 0.0;
                if (fg_of_sample[t] >= 0) {
                    const auto sig = signature(fg_of_sample[t], a);
                    v = sig.offset + sig.amp * std::sin(2.0 * M_PI * sig.freq * sec + sig.phase);
                }
                if (spec.noise_stddev > 0.0) v += spec.noise_stddev * gaussian(rng);
                stream.samples(t, a) = v;
            }
        }
        ds.streams.push_back(std::move(stream));
    }
    ds.manifest.validate();
    return ds;
}

void write_synthetic_dataset(const SyntheticDataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    DatasetManifest manifest = ds.manifest;
    json j;
    j["name"] = manifest.name;
    j["class_names"] = manifest.class_names;
    if (manifest.null_class)
        j["null_class"] = *manifest.null_class;
    j["sampling_rate"] = manifest.sampling_rate;
    j["axes"] = manifest.axes;
    json subjects = json::array();
    for (std::size_t i = 0; i < manifest.subjects.size(); ++i) {
        const std::string file = manifest.subjects[i].id + ".csv";
        subjects.push_back({{"id", manifest.subjects[i].id}, {"stream", file}});
        write_stream_csv((fs::path(dir) / file).string(), ds.streams[i], manifest);
    }
    j["subjects"] = subjects;
    std::ofstream out(fs::path(dir) / "manifest.json");
    out << j.dump(2) << '\n';
}

std::vector<double> default_threshold_grid() {
    std::vector<double> g;
    for (int i = 1; i <= 10; ++i) g.push_back(0.05 * i);
    return g;
}

void RunConfig::validate() const {
    if (protocol != "offline" && protocol != "chunked")
        throw InputError("run config: protocol must be 'offline' or 'chunked'");
    if (feature_source != "raw" && feature_source != "embeddings")
        throw InputError("run config: feature_source must be 'raw' or 'embeddings'");
    if (seeds.empty()) throw InputError("run config: at least one seed required");
    for (double c : chunk_seconds)
        if (c <= 0.0) throw InputError("run config: chunk sizes must be positive");
    if (majority_width_grid.empty())
        throw InputError("run config: majority width grid must not be empty");
    if (jobs < 1) throw InputError("run config: jobs must be >= 1");
    localizer.validate();
}

std::string RunConfig::to_json_string(int indent) const {
    json j;
    j["manifest"] = manifest_path;
    j["window"] = {{"window_seconds", window.window_seconds},
                   {"overlap_fraction", window.overlap_fraction},
                   {"normalize", window.normalize},
                   {"axis_major", window.axis_major}};
    json ranges = json::array();
    for (const auto& [lo, hi] : localizer.regression_ranges)
        ranges.push_back({lo, hi});
    j["localizer"] = {{"hidden_dim", localizer.hidden_dim},
                      {"pyramid_levels", localizer.pyramid_levels},
                      {"head_layers", localizer.head_layers},
                      {"regression_ranges", ranges},
                      {"focal_gamma", localizer.focal_gamma},
                      {"focal_alpha", localizer.focal_alpha},
                      {"reg_loss_weight", localizer.reg_loss_weight},
                      {"learning_rate", localizer.learning_rate},
                      {"momentum", localizer.momentum},
                      {"weight_decay", localizer.weight_decay},
                      {"lr_decay_factor", localizer.lr_decay_factor},
                      {"lr_decay_interval", localizer.lr_decay_interval},
                      {"epochs", localizer.epochs},
                      {"decode_epsilon", localizer.decode_epsilon}};
    j["seeds"] = seeds;
    j["protocol"] = protocol;
    j["chunk_seconds"] = chunk_seconds;
    j["threshold_grid"] = threshold_grid.empty() ? default_threshold_grid() : threshold_grid;
    j["majority_width_grid"] = majority_width_grid;
    j["feature_source"] = feature_source;
    j["jobs"] = jobs;
    j["averaging"] = averaging == Averaging::Macro ? "macro" : "weighted";
    return j.dump(indent);
}

RunConfig RunConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open run config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InputError("run config '" + path + "': invalid JSON: " + e.what());
    }
    RunConfig cfg;
    try {
        cfg.manifest_path = j.value("manifest", std::string());
        if (j.contains("window")) {
            const auto& w = j["window"];
            cfg.window.window_seconds = w.value("window_seconds", cfg.window.window_seconds);
            cfg.window.overlap_fraction =
                w.value("overlap_fraction", cfg.window.overlap_fraction);
            cfg.window.normalize = w.value("normalize", cfg.window.normalize);
            cfg.window.axis_major = w.value("axis_major", cfg.window.axis_major);
        }
        if (j.contains("localizer")) {
            const auto& l = j["localizer"];
            auto& lc = cfg.localizer;
            lc.hidden_dim = l.value("hidden_dim", lc.hidden_dim);
            lc.pyramid_levels = l.value("pyramid_levels", lc.pyramid_levels);
            lc.head_layers = l.value("head_layers", lc.head_layers);
            if (l.contains("regression_ranges"))
                for (const auto& r : l["regression_ranges"])
                    lc.regression_ranges.emplace_back(r.at(0).get<double>(),
                                                      r.at(1).get<double>());
            lc.focal_gamma = l.value("focal_gamma", lc.focal_gamma);
            lc.focal_alpha = l.value("focal_alpha", lc.focal_alpha);
            lc.reg_loss_weight = l.value("reg_loss_weight", lc.reg_loss_weight);
            lc.learning_rate = l.value("learning_rate", lc.learning_rate);
            lc.momentum = l.value("momentum", lc.momentum);
            lc.weight_decay = l.value("weight_decay", lc.weight_decay);
            lc.lr_decay_factor = l.value("lr_decay_factor", lc.lr_decay_factor);
            lc.lr_decay_interval = l.value("lr_decay_interval", lc.lr_decay_interval);
            lc.epochs = l.value("epochs", lc.epochs);
            lc.decode_epsilon = l.value("decode_epsilon", lc.decode_epsilon);
        }
        if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
        cfg.protocol = j.value("protocol", cfg.protocol);
        if (j.contains("chunk_seconds"))
            cfg.chunk_seconds = j["chunk_seconds"].get<std::vector<double>>();
        if (j.contains("threshold_grid"))
            cfg.threshold_grid = j["threshold_grid"].get<std::vector<double>>();
        if (j.contains("majority_width_grid"))
            cfg.majority_width_grid = j["majority_width_grid"].get<std::vector<double>>();
        cfg.feature_source = j.value("feature_source", cfg.feature_source);
        cfg.jobs = j.value("jobs", cfg.jobs);
        if (j.value("averaging", "macro") == std::string("weighted"))
            cfg.averaging = Averaging::Weighted;
    } catch (const json::exception& e) {
        throw InputError("run config '" + path + "': schema error: " + e.what());
    }
    return cfg;
}

Dataset Dataset::load(const RunConfig& cfg) {
    Dataset d;
    d.manifest = load_manifest(cfg.manifest_path);
    for (const auto& entry : d.manifest.subjects)
        d.streams.push_back(load_stream(d.manifest, entry.id));
    if (cfg.feature_source == "embeddings") {
        const int w = cfg.window.window_samples(d.manifest.sampling_rate);
        const int stride = cfg.window.stride_samples(d.manifest.sampling_rate);
        std::size_t dim = 0;
        for (std::size_t i = 0; i < d.manifest.subjects.size(); ++i) {
            const auto& entry = d.manifest.subjects[i];
            if (entry.embeddings_path.empty())
                throw InputError("subject '" + entry.id + "' has no embeddings path");
            const long long t_raw = static_cast<long long>(d.streams[i].num_samples());
            const long long expected = (t_raw - w) / stride + 1;
            auto ws = load_embeddings(entry.embeddings_path, entry.id, w, stride, expected);
            ws.total_samples = t_raw;
            if (dim == 0)
                dim = ws.dim();
            else if (ws.dim() != dim)
                throw InputError("embeddings for '" + entry.id + "' have dimension " +
                                 std::to_string(ws.dim()) + ", expected " +
                                 std::to_string(dim));
            d.embeddings.push_back(std::move(ws));
        }
    }
    return d;
}

Dataset Dataset::from_memory(DatasetManifest manifest, std::vector<SensorStream> streams) {
    Dataset d;
    d.manifest = std::move(manifest);
    d.streams = std::move(streams);
    return d;
}

const SensorStream& Dataset::stream(const std::string& subject_id) const {
    for (const auto& s : streams)
        if (s.subject_id == subject_id) return s;
    throw InputError("unknown subject '" + subject_id + "'");
}

namespace {

struct FoldContext {
    const RunConfig* cfg;
    const Dataset* data;
    int stride = 0;
    int window = 0;
    bool has_null = false;
    int num_fg = 0;
};

std::size_t subject_index(const Dataset& data, const std::string& id) {
    for (std::size_t i = 0; i < data.manifest.subjects.size(); ++i)
        if (data.manifest.subjects[i].id == id) return i;
    throw InputError("unknown subject '" + id + "'");
}

WindowSequence fold_windows(const FoldContext& ctx, std::size_t subject_idx,
                            const NormStats* stats) {
    if (ctx.cfg->feature_source == "embeddings")
        return ctx.data->embeddings[subject_idx];
    return make_windows(ctx.data->streams[subject_idx], ctx.cfg->window, stats);
}

// Train on all subjects but the held-out one, then decode the validation
// stream. Segment labels are remapped to dataset class ids before returning.
FoldResult run_fold(const FoldContext& ctx, const LosoSplit& split, std::uint64_t seed) {
    FoldResult fold;
    fold.subject = split.validation_subject;
    fold.seed = seed;

    const auto& data = *ctx.data;
    const auto& cfg = *ctx.cfg;

    NormStats stats;
    const NormStats* stats_ptr = nullptr;
    if (cfg.feature_source == "raw" && cfg.window.normalize) {
        std::vector<const SensorStream*> training;
        for (const auto& id : split.training_subjects)
            training.push_back(&data.streams[subject_index(data, id)]);
        stats = compute_norm_stats(training);
        stats_ptr = &stats;
    }

    std::vector<WindowSequence> train_ws;
    std::vector<TrainSample> samples;
    for (const auto& id : split.training_subjects) {
        const std::size_t idx = subject_index(data, id);
        train_ws.push_back(fold_windows(ctx, idx, stats_ptr));
    }
    for (std::size_t i = 0; i < split.training_subjects.size(); ++i) {
        const std::size_t idx = subject_index(data, split.training_subjects[i]);
        auto gt = build_ground_truth(data.streams[idx], ctx.stride, data.manifest.null_class);
        TrainSample sample;
        sample.windows = &train_ws[i];
        for (auto seg : gt.segments) {
            seg.label = to_model_class(seg.label, ctx.has_null);
            sample.gt_segments.push_back(seg);
        }
        samples.push_back(std::move(sample));
    }

    LocalizerConfig lc = cfg.localizer;
    lc.seed = seed;
    auto model = std::make_shared<LocalizerModel>(static_cast<int>(train_ws.front().dim()),
                                                  ctx.num_fg, lc);
    model->window_config = cfg.window;
    model->norm_stats = stats;

    const std::size_t val_idx = subject_index(data, split.validation_subject);
    fold.validation_windows = fold_windows(ctx, val_idx, stats_ptr);
    fold.ground_truth =
        build_ground_truth(data.streams[val_idx], ctx.stride, data.manifest.null_class);

    try {
        const auto tr = train(*model, samples);
        fold.loss_curve = tr.epoch_mean_loss;
    } catch (const TrainingDiverged& e) {
        fold.diverged = true;
        fold.warning = "fold (" + split.validation_subject + ", seed " +
                       std::to_string(seed) + ") diverged: " + e.what();
        return fold;
    }

    const auto fo = model->forward(fold.validation_windows);
    auto raw = decode(fo, static_cast<double>(fold.validation_windows.size()),
                      cfg.localizer.decode_epsilon);
    for (auto& s : raw) s.label = to_dataset_class(s.label, ctx.has_null);
    fold.raw_segments = std::move(raw);
    fold.model = model;
    return fold;
}

// Shared offline postprocessing path: threshold, rasterize, smooth, and
// re-extract segments.
struct Postprocessed {
    SampleTimeline timeline;
    std::vector<Segment> segments;
};

Postprocessed postprocess_segments(const std::vector<Segment>& raw,
                                   const WindowSequence& ws, double rate,
                                   std::optional<int> null_class, int stride,
                                   const PostprocessChoice& choice) {
    const auto kept = threshold_segments(raw, choice.threshold);
    Postprocessed out;
    out.timeline = rasterize_segments(kept, ws, ws.total_samples, null_class);
    out.timeline.sampling_rate = rate;
    if (choice.majority_width_seconds > 0.0)
        out.timeline = majority_filter(out.timeline, choice.majority_width_seconds);
    out.segments = timeline_to_segments(out.timeline, stride, null_class);
    return out;
}

double mean_over_seeds_subjects(const std::vector<const FoldResult*>& folds,
                                const std::function<double(const FoldResult&)>& metric,
                                const std::vector<std::uint64_t>& seeds) {
    double seed_sum = 0.0;
    int seed_count = 0;
    for (const auto seed : seeds) {
        double sum = 0.0;
        int count = 0;
        for (const auto* f : folds)
            if (f->seed == seed && !f->diverged) {
                sum += metric(*f);
                ++count;
            }
        if (count > 0) {
            seed_sum += sum / count;
            ++seed_count;
        }
    }
    return seed_count > 0 ? seed_sum / seed_count : 0.0;
}

}  // namespace

PostprocessChoice grid_search_postprocess(const RunConfig& cfg, const Dataset& data,
                                          const std::vector<FoldResult>& folds,
                                          const std::vector<double>& thresholds,
                                          const std::vector<double>& widths) {
    const int stride = cfg.window.stride_samples(data.manifest.sampling_rate);
    const double rate = data.manifest.sampling_rate;
    const auto null_class = data.manifest.null_class;

    std::vector<const FoldResult*> alive;
    for (const auto& f : folds)
        if (!f.diverged) alive.push_back(&f);

    PostprocessChoice choice;
    choice.threshold = thresholds.empty() ? 0.0 : thresholds.front();
    choice.majority_width_seconds = widths.empty() ? 0.0 : widths.front();
    if (alive.empty()) return choice;

    double best_map = -1.0;
    for (const double theta : thresholds) {
        PostprocessChoice c{theta, 0.0};
        const double score = mean_over_seeds_subjects(
            alive,
            [&](const FoldResult& f) {
                const auto post = postprocess_segments(f.raw_segments, f.validation_windows,
                                                       rate, null_class, stride, c);
                SegmentSet p, g;
                p[f.subject] = post.segments;
                g[f.subject] = f.ground_truth.segments;
                return map_suite(p, g).avg;
            },
            cfg.seeds);
        if (score > best_map) {
            best_map = score;
            choice.threshold = theta;
        }
    }

    double best_f1 = -1.0;
    for (const double width : widths) {
        PostprocessChoice c{choice.threshold, width};
        const double score = mean_over_seeds_subjects(
            alive,
            [&](const FoldResult& f) {
                const auto post = postprocess_segments(f.raw_segments, f.validation_windows,
                                                       rate, null_class, stride, c);
                return sample_metrics(post.timeline, f.ground_truth.timeline,
                                      data.manifest.num_classes(), null_class,
                                      cfg.averaging)
                    .f1;
            },
            cfg.seeds);
        if (score > best_f1) {
            best_f1 = score;
            choice.majority_width_seconds = width;
        }
    }
    return choice;
}

std::map<std::string, std::pair<double, double>> aggregate_seeds(
    const std::vector<std::map<std::string, double>>& per_seed) {
    std::map<std::string, std::pair<double, double>> out;
    if (per_seed.empty()) return out;
    for (const auto& [key, value] : per_seed.front()) {
        double mean = 0.0;
        for (const auto& m : per_seed) mean += m.at(key);
        mean /= static_cast<double>(per_seed.size());
        double var = 0.0;
        for (const auto& m : per_seed) {
            const double d = m.at(key) - mean;
            var += d * d;
        }
        var /= static_cast<double>(per_seed.size());
        out[key] = {mean, std::sqrt(var)};
    }
    return out;
}

namespace {

std::map<std::string, double> seed_mean_scalars(const std::vector<FoldResult>& folds,
                                                std::uint64_t seed) {
    std::map<std::string, double> sum;
    int count = 0;
    for (const auto& f : folds) {
        if (f.seed != seed || f.diverged) continue;
        for (const auto& [k, v] : f.report.scalars()) sum[k] += v;
        ++count;
    }
    if (count > 0)
        for (auto& [k, v] : sum) v /= count;
    return sum;
}

}  // namespace

LosoResult run_loso(const RunConfig& cfg, const Dataset& data) {
    cfg.validate();
    const auto splits = loso_splits(data.manifest);

    FoldContext ctx;
    ctx.cfg = &cfg;
    ctx.data = &data;
    ctx.stride = cfg.window.stride_samples(data.manifest.sampling_rate);
    ctx.window = cfg.window.window_samples(data.manifest.sampling_rate);
    ctx.has_null = data.manifest.has_null();
    ctx.num_fg = data.manifest.num_classes() - (ctx.has_null ? 1 : 0);
    if (ctx.num_fg < 1)
        throw InputError("dataset has no foreground classes");

    struct Task {
        std::uint64_t seed;
        std::size_t split;
    };
    std::vector<Task> tasks;
    for (const auto seed : cfg.seeds)
        for (std::size_t i = 0; i < splits.size(); ++i) tasks.push_back({seed, i});

    LosoResult result;
    result.folds.resize(tasks.size());

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) break;
            try {
                result.folds[i] = run_fold(ctx, splits[tasks[i].split], tasks[i].seed);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const int jobs = std::min<int>(std::max(1, cfg.jobs), static_cast<int>(tasks.size()));
    if (jobs <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < jobs; ++i) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    const auto thresholds =
        cfg.threshold_grid.empty() ? default_threshold_grid() : cfg.threshold_grid;
    result.postprocess =
        grid_search_postprocess(cfg, data, result.folds, thresholds, cfg.majority_width_grid);

    const double rate = data.manifest.sampling_rate;
    for (auto& fold : result.folds) {
        if (fold.diverged) {
            result.warnings.push_back(fold.warning);
            continue;
        }
        const auto post =
            postprocess_segments(fold.raw_segments, fold.validation_windows, rate,
                                 data.manifest.null_class, ctx.stride, result.postprocess);
        fold.report = build_report(post.timeline, post.segments, fold.ground_truth,
                                   data.manifest.num_classes(), data.manifest.null_class,
                                   ctx.stride, rate, default_tiou_thresholds(),
                                   cfg.averaging);
        fold.report.subject = fold.subject;
        fold.report.seed = fold.seed;
        fold.report.protocol = "offline";
        fold.report.threshold = result.postprocess.threshold;
        fold.report.majority_width_seconds = result.postprocess.majority_width_seconds;
        fold.report.validation_optimized = true;
    }

    std::vector<std::map<std::string, double>> per_seed;
    for (const auto seed : cfg.seeds) {
        auto m = seed_mean_scalars(result.folds, seed);
        if (!m.empty()) per_seed.push_back(std::move(m));
    }
    result.aggregate_std = aggregate_seeds(per_seed);
    for (const auto& [k, v] : result.aggregate_std) result.aggregate[k] = v.first;
    return result;
}

FoldChunkMetrics evaluate_fold_chunked(const RunConfig& cfg, const Dataset& data,
                                       const FoldResult& fold, double chunk_seconds,
                                       const PostprocessChoice& choice) {
    const auto& ws = fold.validation_windows;
    const double rate = data.manifest.sampling_rate;
    const auto null_class = data.manifest.null_class;
    const int stride = ws.stride;
    const double stride_seconds = stride / rate;
    const std::size_t t_windows = ws.size();
    const long long k = static_cast<long long>(std::floor(chunk_seconds / stride_seconds));

    FoldChunkMetrics out;
    SegmentSet chunk_preds, chunk_gts;
    std::vector<Segment> reconstructed;

    if (k >= 1) {
        const std::size_t n_chunks =
            (t_windows + static_cast<std::size_t>(k) - 1) / static_cast<std::size_t>(k);
        for (std::size_t c = 0; c < n_chunks; ++c) {
            const std::size_t w0 = c * static_cast<std::size_t>(k);
            const std::size_t w1 = std::min(w0 + static_cast<std::size_t>(k), t_windows);
            const bool last = (c + 1 == n_chunks);

            WindowSequence sub;
            sub.subject_id = ws.subject_id;
            sub.window_size = ws.window_size;
            sub.stride = ws.stride;
            sub.features = Matrix(w1 - w0, ws.dim());
            std::copy(ws.features.row(w0), ws.features.row(w0) + (w1 - w0) * ws.dim(),
                      sub.features.data.begin());
            sub.window_starts.resize(w1 - w0);
            for (std::size_t t = 0; t < w1 - w0; ++t)
                sub.window_starts[t] = static_cast<long long>(t) * stride;
            const long long local_samples =
                last ? ws.total_samples - static_cast<long long>(w0) * stride
                     : static_cast<long long>(w1 - w0) * stride;
            sub.total_samples = local_samples;

            const auto fo = fold.model->forward(sub);
            auto raw = decode(fo, static_cast<double>(w1 - w0),
                              cfg.localizer.decode_epsilon);
            for (auto& s : raw)
                s.label = to_dataset_class(s.label, data.manifest.has_null());

            // c-mAP: the chunk is its own sequence with clipped ground truth.
            const auto post =
                postprocess_segments(raw, sub, rate, null_class, stride, choice);
            const std::string key = "chunk_" + std::to_string(c);
            chunk_preds[key] = post.segments;
            const double u0 = static_cast<double>(w0);
            const double u1 = last ? static_cast<double>(ws.total_samples) / stride
                                   : static_cast<double>(w1);
            std::vector<Segment> gt_clip;
            for (const auto& g : fold.ground_truth.segments) {
                Segment s = g;
                s.start = std::max(s.start, u0);
                s.end = std::min(s.end, u1);
                if (s.end - s.start < 1.0) continue;  // sub-window fragments dropped
                s.start -= u0;
                s.end -= u0;
                gt_clip.push_back(s);
            }
            chunk_gts[key] = std::move(gt_clip);

            const auto kept = threshold_segments(raw, choice.threshold);
            for (auto s : kept) {
                s.start += u0;
                s.end += u0;
                reconstructed.push_back(s);
            }
        }
    } else {
        // Chunks shorter than one window yield no predictions at all.
        chunk_preds["chunk_0"] = {};
        chunk_gts["chunk_0"] = fold.ground_truth.segments;
    }

    out.c_map = map_suite(chunk_preds, chunk_gts).avg;

    // Reconstructed stream: thresholding already applied per chunk, so the
    // shared path runs with threshold 0 to avoid double filtering.
    PostprocessChoice recon_choice{0.0, choice.majority_width_seconds};
    const auto post = postprocess_segments(reconstructed, ws, rate, null_class, stride,
                                           recon_choice);
    out.recon_report =
        build_report(post.timeline, post.segments, fold.ground_truth,
                     data.manifest.num_classes(), null_class, stride, rate,
                     default_tiou_thresholds(), cfg.averaging);
    out.recon_report.subject = fold.subject;
    out.recon_report.seed = fold.seed;
    out.recon_report.protocol = "chunked";
    out.recon_report.threshold = choice.threshold;
    out.recon_report.majority_width_seconds = choice.majority_width_seconds;
    out.recon_report.validation_optimized = true;
    out.f1 = out.recon_report.f1;
    out.recon_map = out.recon_report.avg_map;
    return out;
}

ChunkedResult run_chunked(const RunConfig& cfg, const Dataset& data,
                          const LosoResult& loso) {
    ChunkedResult result;
    for (const double chunk : cfg.chunk_seconds) {
        ChunkSizeResult cr;
        cr.chunk_seconds = chunk;
        std::vector<std::map<std::string, double>> per_seed;
        for (const auto seed : cfg.seeds) {
            std::map<std::string, double> sum;
            int count = 0;
            for (const auto& fold : loso.folds) {
                if (fold.seed != seed || fold.diverged || !fold.model) continue;
                const auto m =
                    evaluate_fold_chunked(cfg, data, fold, chunk, loso.postprocess);
                sum["f1"] += m.f1;
                sum["c_map"] += m.c_map;
                sum["map"] += m.recon_map;
                for (const auto& [k, v] : m.recon_report.scalars())
                    if (k != "f1" && k != "avg_map") sum[k] += v;
                ++count;
            }
            if (count > 0) {
                for (auto& [k, v] : sum) v /= count;
                per_seed.push_back(std::move(sum));
            }
        }
        cr.aggregate_std = aggregate_seeds(per_seed);
        for (const auto& [k, v] : cr.aggregate_std) cr.aggregate[k] = v.first;
        result.per_chunk.push_back(std::move(cr));
    }
    return result;
}

namespace {

json scalar_map_json(const std::map<std::string, std::pair<double, double>>& m) {
    json j = json::object();
    for (const auto& [k, v] : m) {
        json e;
        e["mean"] = std::isnan(v.first) ? json(nullptr) : json(v.first);
        e["std"] = std::isnan(v.second) ? json(nullptr) : json(v.second);
        j[k] = e;
    }
    return j;
}

}  // namespace

std::string summary_json_string(const RunConfig& cfg, const Dataset& data,
                                const LosoResult& loso, const ChunkedResult* chunked) {
    json j;
    j["dataset"] = data.manifest.name;
    j["config"] = json::parse(cfg.to_json_string());
    j["postprocess"] = {{"threshold", loso.postprocess.threshold},
                        {"majority_width_seconds", loso.postprocess.majority_width_seconds},
                        {"validation_optimized", true}};
    json per_seed = json::object();
    for (const auto seed : cfg.seeds) {
        const auto m = seed_mean_scalars(loso.folds, seed);
        json sj = json::object();
        for (const auto& [k, v] : m) sj[k] = std::isnan(v) ? json(nullptr) : json(v);
        per_seed[std::to_string(seed)] = sj;
    }
    j["per_seed"] = per_seed;
    j["aggregate"] = scalar_map_json(loso.aggregate_std);
    j["warnings"] = loso.warnings;
    if (chunked) {
        json cj = json::object();
        for (const auto& c : chunked->per_chunk) {
            std::ostringstream key;
            key << c.chunk_seconds;
            cj[key.str()] = scalar_map_json(c.aggregate_std);
        }
        j["chunked"] = cj;
    }
    return j.dump(2);
}

std::string summary_csv_string(const LosoResult& loso, const ChunkedResult* chunked) {
    std::ostringstream out;
    out.precision(12);
    out << "protocol,chunk_seconds,metric,mean,std\n";
    for (const auto& [k, v] : loso.aggregate_std)
        out << "offline,," << k << ',' << v.first << ',' << v.second << '\n';
    if (chunked)
        for (const auto& c : chunked->per_chunk)
            for (const auto& [k, v] : c.aggregate_std)
                out << "chunked," << c.chunk_seconds << ',' << k << ',' << v.first << ','
                    << v.second << '\n';
    return out.str();
}

void write_reports(const std::string& dir, const RunConfig& cfg, const Dataset& data,
                   const LosoResult& loso, const ChunkedResult* chunked) {
    const fs::path base = fs::path(dir) / data.manifest.name;
    for (const auto& fold : loso.folds) {
        if (fold.diverged) continue;
        const fs::path seed_dir = base / std::to_string(fold.seed);
        fs::create_directories(seed_dir);
        {
            std::ofstream out(seed_dir / (fold.subject + ".json"));
            out << fold.report.to_json_string() << '\n';
        }
        {
            std::ofstream out(seed_dir / (fold.subject + "_confusion.csv"));
            out << fold.report.confusion_csv();
        }
    }
    fs::create_directories(base);
    {
        std::ofstream out(base / "summary.json");
        out << summary_json_string(cfg, data, loso, chunked) << '\n';
    }
    {
        std::ofstream out(base / "summary.csv");
        out << summary_csv_string(loso, chunked);
    }
}

}  // namespace tal
