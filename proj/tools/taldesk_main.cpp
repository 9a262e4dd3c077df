#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tal/harness.hpp"
#include "tal/ingest.hpp"
#include "tal/localizer.hpp"
#include "tal/metrics.hpp"
#include "tal/postprocess.hpp"
#include "tal/windowing.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stod(item));
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stoull(item));
    return out;
}

struct WindowFlags {
    double window_sec = 1.0;
    double overlap = 0.5;
    bool no_normalize = false;
    bool axis_major = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--window-sec", window_sec, "Sliding window length in seconds");
        cmd->add_option("--overlap", overlap, "Window overlap fraction in [0,1)");
        cmd->add_flag("--no-normalize", no_normalize, "Disable per-axis z-scoring");
        cmd->add_flag("--axis-major", axis_major,
                      "Concatenate whole axis columns instead of per-sample rows");
    }
    tal::WindowConfig config() const {
        tal::WindowConfig c;
        c.window_seconds = window_sec;
        c.overlap_fraction = overlap;
        c.normalize = !no_normalize;
        c.axis_major = axis_major;
        return c;
    }
};

struct LocalizerFlags {
    tal::LocalizerConfig cfg;

    void attach(CLI::App* cmd) {
        cmd->add_option("--hidden", cfg.hidden_dim, "Hidden feature dimension");
        cmd->add_option("--levels", cfg.pyramid_levels, "Pyramid levels");
        cmd->add_option("--head-layers", cfg.head_layers, "Conv layers per head");
        cmd->add_option("--gamma", cfg.focal_gamma, "Focal loss gamma");
        cmd->add_option("--alpha", cfg.focal_alpha, "Focal loss alpha");
        cmd->add_option("--lambda", cfg.reg_loss_weight, "Regression loss weight");
        cmd->add_option("--lr", cfg.learning_rate, "Learning rate");
        cmd->add_option("--momentum", cfg.momentum, "SGD momentum");
        cmd->add_option("--weight-decay", cfg.weight_decay, "L2 weight decay");
        cmd->add_option("--lr-decay", cfg.lr_decay_factor,
                        "Learning-rate multiplier per decay interval");
        cmd->add_option("--lr-decay-interval", cfg.lr_decay_interval,
                        "Epochs between learning-rate decays");
        cmd->add_option("--epochs", cfg.epochs, "Training epochs");
        cmd->add_option("--decode-eps", cfg.decode_epsilon,
                        "Minimum class probability for decoded segments");
    }
};

std::string default_report_dir() {
    const char* env = std::getenv("TALDESK_REPORT_DIR");
    return env ? env : "";
}

void print_aggregate_table(const tal::LosoResult& result) {
    auto cell = [&](const char* key) {
        auto it = result.aggregate_std.find(key);
        if (it == result.aggregate_std.end() || std::isnan(it->second.first))
            return std::string("   -  ");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%6.2f", it->second.first);
        return std::string(buf);
    };
    std::printf("%-10s %-6s %-6s %-6s %-6s %-6s %-6s %-6s %-6s %-6s %-7s\n", "metric", "P",
                "R", "F1", "UR", "OR", "DR", "IR", "FR", "MR", "mAP");
    std::printf("%-10s %s %s %s %s %s %s %s %s %s  %s\n", "mean",
                cell("precision").c_str(), cell("recall").c_str(), cell("f1").c_str(),
                cell("ward.UR").c_str(), cell("ward.OR").c_str(), cell("ward.DR").c_str(),
                cell("ward.IR").c_str(), cell("ward.FR").c_str(), cell("ward.MR").c_str(),
                cell("avg_map").c_str());
    std::printf("threshold=%.2f majority_width=%.1fs (validation-optimized)\n",
                result.postprocess.threshold, result.postprocess.majority_width_seconds);
    for (const auto& w : result.warnings) std::printf("warning: %s\n", w.c_str());
}

int cmd_synth(const std::string& out_dir, tal::SynthSpec spec, const std::string& bins) {
    if (!bins.empty()) {
        std::stringstream ss(bins);
        std::string item;
        while (std::getline(ss, item, ',')) {
            const auto eq = item.find('=');
            if (eq == std::string::npos)
                throw tal::InputError("bad --bins entry '" + item + "' (want XS=2,...)");
            const std::string key = item.substr(0, eq);
            const int count = std::stoi(item.substr(eq + 1));
            if (key == "XS") spec.segments_per_subject.xs = count;
            else if (key == "S") spec.segments_per_subject.s = count;
            else if (key == "M") spec.segments_per_subject.m = count;
            else if (key == "L") spec.segments_per_subject.l = count;
            else if (key == "XL") spec.segments_per_subject.xl = count;
            else throw tal::InputError("unknown bin '" + key + "'");
        }
    }
    const auto ds = tal::make_synthetic_dataset(spec);
    tal::write_synthetic_dataset(ds, out_dir);
    long long total = 0;
    for (const auto& s : ds.streams) total += static_cast<long long>(s.num_samples());
    std::printf("wrote %s: %d subjects, %d classes, %lld samples\n",
                (fs::path(out_dir) / "manifest.json").string().c_str(),
                static_cast<int>(ds.streams.size()), ds.manifest.num_classes(), total);
    return 0;
}

int cmd_window(const std::string& manifest_path, const std::string& subject,
               const std::string& out, const WindowFlags& wf, bool binary) {
    const auto manifest = tal::load_manifest(manifest_path);
    const auto stream = tal::load_stream(manifest, subject);
    const auto ws = tal::make_windows(stream, wf.config());
    if (binary)
        tal::write_embeddings_binary(out, ws);
    else
        tal::write_embeddings_csv(out, ws);
    std::printf("wrote %s: %zu windows x %zu dims (W=%d stride=%d)\n", out.c_str(),
                ws.size(), ws.dim(), ws.window_size, ws.stride);
    return 0;
}

tal::RunConfig build_run_config(const std::string& config_path,
                                const std::string& manifest, const WindowFlags& wf,
                                const CLI::App* cmd, const LocalizerFlags& lf,
                                const std::string& seeds, const std::string& thresholds,
                                const std::string& widths, const std::string& source,
                                int jobs, const std::string& chunks) {
    tal::RunConfig cfg;
    if (!config_path.empty()) cfg = tal::RunConfig::from_json_file(config_path);
    if (!manifest.empty()) cfg.manifest_path = manifest;
    if (cfg.manifest_path.empty())
        throw tal::InputError("a manifest is required (--manifest or config file)");
    auto given = [&](const char* name) { return cmd->count(name) > 0; };
    if (given("--window-sec")) cfg.window.window_seconds = wf.window_sec;
    if (given("--overlap")) cfg.window.overlap_fraction = wf.overlap;
    if (given("--no-normalize")) cfg.window.normalize = !wf.no_normalize;
    if (given("--axis-major")) cfg.window.axis_major = wf.axis_major;
    if (given("--hidden")) cfg.localizer.hidden_dim = lf.cfg.hidden_dim;
    if (given("--levels")) cfg.localizer.pyramid_levels = lf.cfg.pyramid_levels;
    if (given("--head-layers")) cfg.localizer.head_layers = lf.cfg.head_layers;
    if (given("--gamma")) cfg.localizer.focal_gamma = lf.cfg.focal_gamma;
    if (given("--alpha")) cfg.localizer.focal_alpha = lf.cfg.focal_alpha;
    if (given("--lambda")) cfg.localizer.reg_loss_weight = lf.cfg.reg_loss_weight;
    if (given("--lr")) cfg.localizer.learning_rate = lf.cfg.learning_rate;
    if (given("--momentum")) cfg.localizer.momentum = lf.cfg.momentum;
    if (given("--weight-decay")) cfg.localizer.weight_decay = lf.cfg.weight_decay;
    if (given("--lr-decay")) cfg.localizer.lr_decay_factor = lf.cfg.lr_decay_factor;
    if (given("--lr-decay-interval"))
        cfg.localizer.lr_decay_interval = lf.cfg.lr_decay_interval;
    if (given("--epochs")) cfg.localizer.epochs = lf.cfg.epochs;
    if (given("--decode-eps")) cfg.localizer.decode_epsilon = lf.cfg.decode_epsilon;
    if (!seeds.empty()) cfg.seeds = parse_seed_list(seeds);
    if (!thresholds.empty()) cfg.threshold_grid = parse_double_list(thresholds);
    if (!widths.empty()) cfg.majority_width_grid = parse_double_list(widths);
    if (!source.empty()) cfg.feature_source = source;
    if (jobs > 0) cfg.jobs = jobs;
    if (!chunks.empty()) cfg.chunk_seconds = parse_double_list(chunks);
    return cfg;
}

int cmd_loso(const tal::RunConfig& cfg, const std::string& report_dir,
             const std::string& format) {
    const auto data = tal::Dataset::load(cfg);
    const auto result = tal::run_loso(cfg, data);
    if (format == "json") {
        std::cout << tal::summary_json_string(cfg, data, result) << '\n';
    } else {
        print_aggregate_table(result);
    }
    if (!report_dir.empty()) {
        tal::write_reports(report_dir, cfg, data, result);
        std::printf("reports written to %s\n",
                    (fs::path(report_dir) / data.manifest.name).string().c_str());
    }
    return 0;
}

int cmd_chunk_eval(const tal::RunConfig& base, const std::string& report_dir,
                   const std::string& format) {
    tal::RunConfig cfg = base;
    cfg.protocol = "chunked";
    const auto data = tal::Dataset::load(cfg);
    const auto loso = tal::run_loso(cfg, data);
    const auto chunked = tal::run_chunked(cfg, data, loso);
    if (format == "json") {
        std::cout << tal::summary_json_string(cfg, data, loso, &chunked) << '\n';
    } else {
        std::printf("%-10s %8s %8s %8s\n", "chunk", "F1", "c-mAP", "mAP");
        for (const auto& c : chunked.per_chunk) {
            auto get = [&](const char* k) {
                auto it = c.aggregate.find(k);
                return it == c.aggregate.end() ? 0.0 : it->second;
            };
            std::printf("%8.0fs %8.2f %8.2f %8.2f\n", c.chunk_seconds, get("f1"),
                        get("c_map"), get("map"));
        }
        auto get = [&](const char* k) {
            auto it = loso.aggregate.find(k);
            return it == loso.aggregate.end() ? 0.0 : it->second;
        };
        std::printf("%-10s %8.2f %8s %8.2f\n", "unchunked", get("f1"), "-",
                    get("avg_map"));
    }
    if (!report_dir.empty()) {
        tal::write_reports(report_dir, cfg, data, loso, &chunked);
        std::printf("reports written to %s\n",
                    (fs::path(report_dir) / data.manifest.name).string().c_str());
    }
    return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& val_subject,
              const std::string& out, const WindowFlags& wf, tal::LocalizerConfig lc,
              std::uint64_t seed, const std::string& source) {
    tal::RunConfig cfg;
    cfg.manifest_path = manifest_path;
    cfg.window = wf.config();
    cfg.feature_source = source.empty() ? "raw" : source;
    const auto data = tal::Dataset::load(cfg);
    const auto& manifest = data.manifest;
    const bool has_null = manifest.has_null();
    const int num_fg = manifest.num_classes() - (has_null ? 1 : 0);
    const int stride = cfg.window.stride_samples(manifest.sampling_rate);

    std::vector<std::size_t> training;
    for (std::size_t i = 0; i < data.streams.size(); ++i)
        if (data.streams[i].subject_id != val_subject) training.push_back(i);
    if (training.empty()) throw tal::InputError("no training subjects left");

    tal::NormStats stats;
    const tal::NormStats* stats_ptr = nullptr;
    if (cfg.feature_source == "raw" && cfg.window.normalize) {
        std::vector<const tal::SensorStream*> ptrs;
        for (const auto i : training) ptrs.push_back(&data.streams[i]);
        stats = tal::compute_norm_stats(ptrs);
        stats_ptr = &stats;
    }

    std::vector<tal::WindowSequence> ws;
    for (const auto i : training)
        ws.push_back(cfg.feature_source == "embeddings"
                         ? data.embeddings[i]
                         : tal::make_windows(data.streams[i], cfg.window, stats_ptr));

    std::vector<tal::TrainSample> samples;
    for (std::size_t i = 0; i < training.size(); ++i) {
        auto gt = tal::build_ground_truth(data.streams[training[i]], stride,
                                          manifest.null_class);
        tal::TrainSample sample;
        sample.windows = &ws[i];
        for (auto seg : gt.segments) {
            seg.label = tal::to_model_class(seg.label, has_null);
            sample.gt_segments.push_back(seg);
        }
        samples.push_back(std::move(sample));
    }

    lc.seed = seed;
    tal::LocalizerModel model(static_cast<int>(ws.front().dim()), num_fg, lc);
    model.window_config = cfg.window;
    model.norm_stats = stats;
    const auto result = tal::train(model, samples);
    model.save(out);
    std::printf("trained on %zu subjects, %d epochs: loss %.5f -> %.5f; saved %s\n",
                samples.size(), lc.epochs,
                result.epoch_mean_loss.empty() ? 0.0 : result.epoch_mean_loss.front(),
                result.epoch_mean_loss.empty() ? 0.0 : result.epoch_mean_loss.back(),
                out.c_str());
    return 0;
}

int cmd_predict(const std::string& model_path, const std::string& manifest_path,
                const std::string& subject, const std::string& out, double theta,
                const std::string& source) {
    auto model = tal::LocalizerModel::load(model_path);
    tal::RunConfig cfg;
    cfg.manifest_path = manifest_path;
    cfg.window = model.window_config;
    cfg.feature_source = source.empty() ? "raw" : source;
    const auto data = tal::Dataset::load(cfg);
    const bool has_null = data.manifest.has_null();

    tal::WindowSequence ws;
    if (cfg.feature_source == "embeddings") {
        for (std::size_t i = 0; i < data.manifest.subjects.size(); ++i)
            if (data.manifest.subjects[i].id == subject) ws = data.embeddings[i];
        if (ws.size() == 0) throw tal::InputError("no embeddings for '" + subject + "'");
    } else {
        const auto& stream = data.stream(subject);
        const tal::NormStats* stats =
            model.norm_stats.mean.empty() ? nullptr : &model.norm_stats;
        ws = tal::make_windows(stream, model.window_config, stats);
    }

    const auto fo = model.forward(ws);
    auto segments =
        tal::decode(fo, static_cast<double>(ws.size()), model.config().decode_epsilon);
    for (auto& s : segments) s.label = tal::to_dataset_class(s.label, has_null);
    segments = tal::threshold_segments(segments, theta);

    tal::SegmentSet set;
    set[subject] = segments;
    tal::write_segments_csv(out, set, data.manifest);
    std::printf("wrote %zu segments to %s\n", segments.size(), out.c_str());
    return 0;
}

int cmd_eval(const std::string& manifest_path, const std::string& pred_path,
             const std::string& gt_path, const WindowFlags& wf, double theta,
             double majority_width, const std::string& format) {
    const auto manifest = tal::load_manifest(manifest_path);
    const auto wcfg = wf.config();
    const int stride = wcfg.stride_samples(manifest.sampling_rate);
    const int window = wcfg.window_samples(manifest.sampling_rate);
    const auto preds = tal::read_segments_csv(pred_path, manifest);

    tal::SegmentSet gt_sets;
    if (!gt_path.empty()) gt_sets = tal::read_segments_csv(gt_path, manifest);

    json folds = json::array();
    std::vector<std::map<std::string, double>> scalar_rows;
    for (const auto& [subject, segs] : preds) {
        const auto stream = tal::load_stream(manifest, subject);
        const long long t_raw = static_cast<long long>(stream.num_samples());
        tal::WindowSequence geom;
        geom.window_size = window;
        geom.stride = stride;
        geom.total_samples = t_raw;

        tal::GroundTruth gt;
        if (!gt_path.empty()) {
            auto it = gt_sets.find(subject);
            if (it == gt_sets.end())
                throw tal::InputError("no ground-truth segments for subject '" + subject +
                                      "'");
            gt.subject_id = subject;
            gt.segments = it->second;
            gt.timeline =
                tal::rasterize_segments(it->second, geom, t_raw, manifest.null_class);
            gt.timeline.sampling_rate = manifest.sampling_rate;
        } else {
            gt = tal::build_ground_truth(stream, stride, manifest.null_class);
        }

        const auto kept = tal::threshold_segments(segs, theta);
        auto tl = tal::rasterize_segments(kept, geom, t_raw, manifest.null_class);
        tl.sampling_rate = manifest.sampling_rate;
        if (majority_width > 0.0) tl = tal::majority_filter(tl, majority_width);
        const auto pred_segments =
            tal::timeline_to_segments(tl, stride, manifest.null_class);

        auto report = tal::build_report(tl, pred_segments, gt, manifest.num_classes(),
                                        manifest.null_class, stride,
                                        manifest.sampling_rate);
        report.subject = subject;
        report.threshold = theta;
        report.majority_width_seconds = majority_width;
        folds.push_back(json::parse(report.to_json_string()));
        scalar_rows.push_back(report.scalars());
    }
    if (folds.empty()) throw tal::InputError("no predicted subjects found in the CSV");
    const auto agg = tal::aggregate_seeds(scalar_rows);

    if (format == "table") {
        std::printf("%-12s %7s %7s %7s %7s\n", "subject", "P", "R", "F1", "mAP");
        for (const auto& f : folds)
            std::printf("%-12s %7.2f %7.2f %7.2f %7.2f\n",
                        f["subject"].get<std::string>().c_str(),
                        f["precision"].is_null() ? 0.0 : f["precision"].get<double>(),
                        f["recall"].is_null() ? 0.0 : f["recall"].get<double>(),
                        f["f1"].is_null() ? 0.0 : f["f1"].get<double>(),
                        f["avg_map"].get<double>());
        if (!agg.empty())
            std::printf("%-12s %7.2f %7.2f %7.2f %7.2f\n", "mean",
                        agg.at("precision").first, agg.at("recall").first,
                        agg.at("f1").first, agg.at("avg_map").first);
    } else {
        json out;
        out["subjects"] = folds;
        json aj = json::object();
        for (const auto& [k, v] : agg)
            aj[k] = std::isnan(v.first) ? json(nullptr) : json(v.first);
        out["aggregate"] = aj;
        std::cout << out.dump(2) << '\n';
    }
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tolerance, int instances) {
    double worst = 0.0;
    for (int inst = 0; inst < instances; ++inst) {
        tal::LocalizerConfig cfg;
        cfg.hidden_dim = 6;
        cfg.pyramid_levels = 3;
        cfg.epochs = 0;
        cfg.seed = seed + static_cast<std::uint64_t>(inst);
        tal::LocalizerModel model(3, 2, cfg);

        std::mt19937_64 rng(cfg.seed + 17);
        tal::WindowSequence ws;
        ws.subject_id = "gradcheck";
        ws.window_size = 1;
        ws.stride = 1;
        ws.features = tal::Matrix(7, 3);
        for (auto& v : ws.features.data)
            v = static_cast<double>(rng() >> 11) * 0x1.0p-52 - 1.0;
        ws.window_starts.resize(7);
        for (std::size_t t = 0; t < 7; ++t)
            ws.window_starts[t] = static_cast<long long>(t);
        ws.total_samples = 8;
        tal::TrainSample sample;
        sample.windows = &ws;
        sample.gt_segments = {{1.0, 4.0, 0, 1.0}, {5.0, 7.0, 1, 1.0}};

        const auto report = tal::check_gradients(model, sample);
        for (const auto& b : report.blocks)
            std::printf("seed %llu  %-14s max rel err %.3e\n",
                        static_cast<unsigned long long>(cfg.seed), b.name.c_str(),
                        b.max_rel_error);
        worst = std::max(worst, report.max_rel_error);
    }
    std::printf("max relative error: %.3e (tolerance %.1e)\n", worst, tolerance);
    return worst < tolerance ? 0 : 1;
}

int cmd_report(const std::string& dir, const std::string& csv_out) {
    std::map<std::uint64_t, std::vector<std::map<std::string, double>>> by_seed;
    for (const auto& seed_entry : fs::directory_iterator(dir)) {
        if (!seed_entry.is_directory()) continue;
        std::uint64_t seed = 0;
        try {
            seed = std::stoull(seed_entry.path().filename().string());
        } catch (const std::exception&) {
            continue;
        }
        for (const auto& f : fs::directory_iterator(seed_entry.path())) {
            if (f.path().extension() != ".json") continue;
            std::ifstream in(f.path());
            json j;
            in >> j;
            std::map<std::string, double> s;
            for (const char* key : {"precision", "recall", "f1", "avg_map", "null_accuracy"})
                if (j.contains(key) && !j[key].is_null()) s[key] = j[key].get<double>();
            if (j.contains("ward"))
                for (const auto& [k, v] : j["ward"].items())
                    s["ward." + k] = v.get<double>();
            by_seed[seed].push_back(std::move(s));
        }
    }
    if (by_seed.empty()) throw tal::InputError("no fold reports under '" + dir + "'");

    std::vector<std::map<std::string, double>> per_seed;
    for (const auto& [seed, rows] : by_seed) {
        std::map<std::string, double> mean;
        for (const auto& r : rows)
            for (const auto& [k, v] : r) mean[k] += v;
        for (auto& [k, v] : mean) v /= static_cast<double>(rows.size());
        per_seed.push_back(std::move(mean));
    }
    const auto agg = tal::aggregate_seeds(per_seed);
    std::printf("%-16s %10s %10s\n", "metric", "mean", "std");
    for (const auto& [k, v] : agg)
        std::printf("%-16s %10.3f %10.3f\n", k.c_str(), v.first, v.second);
    if (!csv_out.empty()) {
        std::ofstream out(csv_out);
        out << "metric,mean,std\n";
        for (const auto& [k, v] : agg)
            out << k << ',' << v.first << ',' << v.second << '\n';
        std::printf("wrote %s\n", csv_out.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"taldesk: segment-based activity localization for inertial streams"};
    app.require_subcommand(1);
    std::string format = "table";
    app.add_option("--format", format, "Output format: table|json")
        ->check(CLI::IsMember({"table", "json"}));

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    std::string synth_out, synth_bins;
    tal::SynthSpec spec;
    bool synth_no_null = false;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--classes", spec.num_classes, "Foreground classes");
    synth->add_option("--subjects", spec.num_subjects, "Subjects");
    synth->add_option("--axes", spec.num_axes, "Sensor axes");
    synth->add_option("--rate", spec.sampling_rate, "Sampling rate (Hz)");
    synth->add_option("--noise", spec.noise_stddev, "Gaussian noise stddev");
    synth->add_option("--seed", spec.seed, "Generator seed");
    synth->add_option("--name", spec.name, "Dataset name");
    synth->add_option("--gap-min", spec.gap_seconds_min, "Minimum NULL gap (s)");
    synth->add_option("--gap-max", spec.gap_seconds_max, "Maximum NULL gap (s)");
    synth->add_option("--bins", synth_bins,
                      "Segments per bin, e.g. XS=2,S=2,M=2,L=2,XL=3");
    synth->add_flag("--no-null", synth_no_null, "Omit the NULL class");

    auto* windowc = app.add_subcommand("window", "Emit vectorized window features");
    std::string w_manifest, w_subject, w_out;
    WindowFlags w_flags;
    bool w_binary = false;
    windowc->add_option("--manifest", w_manifest, "Manifest JSON")->required();
    windowc->add_option("--subject", w_subject, "Subject id")->required();
    windowc->add_option("--out", w_out, "Output file")->required();
    windowc->add_flag("--binary", w_binary, "Write raw float32 instead of CSV");
    w_flags.attach(windowc);

    auto* trainc = app.add_subcommand("train", "Train a single localizer fold");
    std::string t_manifest, t_val, t_out, t_source;
    std::uint64_t t_seed = 1;
    WindowFlags t_wflags;
    LocalizerFlags t_lflags;
    trainc->add_option("--manifest", t_manifest, "Manifest JSON")->required();
    trainc->add_option("--val-subject", t_val, "Held-out subject (excluded from training)");
    trainc->add_option("--out", t_out, "Checkpoint path")->required();
    trainc->add_option("--seed", t_seed, "Model seed");
    trainc->add_option("--feature-source", t_source, "raw|embeddings")
        ->check(CLI::IsMember({"raw", "embeddings"}));
    t_wflags.attach(trainc);
    t_lflags.attach(trainc);

    auto* predictc = app.add_subcommand("predict", "Decode a checkpoint into segments");
    std::string p_model, p_manifest, p_subject, p_out, p_source;
    double p_theta = 0.0;
    predictc->add_option("--model", p_model, "Checkpoint path")->required();
    predictc->add_option("--manifest", p_manifest, "Manifest JSON")->required();
    predictc->add_option("--subject", p_subject, "Subject id")->required();
    predictc->add_option("--out", p_out, "Segments CSV output")->required();
    predictc->add_option("--theta", p_theta, "Confidence threshold");
    predictc->add_option("--feature-source", p_source, "raw|embeddings")
        ->check(CLI::IsMember({"raw", "embeddings"}));

    auto* evalc = app.add_subcommand("eval", "Evaluate predicted segments");
    std::string e_manifest, e_pred, e_gt;
    WindowFlags e_wflags;
    double e_theta = 0.0, e_width = 0.0;
    evalc->add_option("--manifest", e_manifest, "Manifest JSON")->required();
    evalc->add_option("--pred", e_pred, "Predicted segments CSV")->required();
    evalc->add_option("--gt", e_gt, "Ground-truth segments CSV (default: stream labels)");
    evalc->add_option("--theta", e_theta, "Confidence threshold");
    evalc->add_option("--majority-width", e_width, "Majority filter width (s)");
    e_wflags.attach(evalc);

    auto add_run_flags = [&](CLI::App* cmd, std::string& manifest, std::string& config,
                             WindowFlags& wflags, LocalizerFlags& lflags,
                             std::string& seeds, std::string& thresholds,
                             std::string& widths, std::string& source, int& jobs,
                             std::string& report_dir, std::string& chunks) {
        cmd->add_option("--manifest", manifest, "Manifest JSON");
        cmd->add_option("--config", config, "Run config JSON");
        cmd->add_option("--seeds", seeds, "Comma-separated seeds (default 1,2,3)");
        cmd->add_option("--threshold-grid", thresholds, "Comma-separated thresholds");
        cmd->add_option("--majority-grid", widths, "Comma-separated widths (s)");
        cmd->add_option("--feature-source", source, "raw|embeddings")
            ->check(CLI::IsMember({"raw", "embeddings"}));
        cmd->add_option("--jobs", jobs, "Worker threads (1 = determinism baseline)");
        cmd->add_option("--report-dir", report_dir,
                        "Report output directory (env TALDESK_REPORT_DIR)");
        cmd->add_option("--chunks", chunks, "Comma-separated chunk sizes (s)");
        wflags.attach(cmd);
        lflags.attach(cmd);
    };

    auto* losoc = app.add_subcommand("loso", "Leave-one-subject-out protocol");
    std::string l_manifest, l_config, l_seeds, l_thresholds, l_widths, l_source, l_chunks;
    std::string l_report = default_report_dir();
    int l_jobs = 0;
    WindowFlags l_wflags;
    LocalizerFlags l_lflags;
    add_run_flags(losoc, l_manifest, l_config, l_wflags, l_lflags, l_seeds, l_thresholds,
                  l_widths, l_source, l_jobs, l_report, l_chunks);

    auto* chunkc = app.add_subcommand("chunk-eval", "Chunked near-online protocol");
    std::string c_manifest, c_config, c_seeds, c_thresholds, c_widths, c_source, c_chunks;
    std::string c_report = default_report_dir();
    int c_jobs = 0;
    WindowFlags c_wflags;
    LocalizerFlags c_lflags;
    add_run_flags(chunkc, c_manifest, c_config, c_wflags, c_lflags, c_seeds, c_thresholds,
                  c_widths, c_source, c_jobs, c_report, c_chunks);

    auto* gradc = app.add_subcommand("gradcheck", "Finite-difference gradient check");
    std::uint64_t g_seed = 1;
    double g_tol = 1e-4;
    int g_instances = 1;
    gradc->add_option("--seed", g_seed, "Base seed");
    gradc->add_option("--tol", g_tol, "Failure tolerance");
    gradc->add_option("--instances", g_instances, "Number of seeded tiny models");

    auto* reportc = app.add_subcommand("report", "Merge fold reports");
    std::string r_dir, r_csv;
    reportc->add_option("--dir", r_dir, "reports/<dataset> directory")->required();
    reportc->add_option("--csv", r_csv, "Write flat CSV here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*synth) {
            spec.include_null = !synth_no_null;
            return cmd_synth(synth_out, spec, synth_bins);
        }
        if (*windowc) return cmd_window(w_manifest, w_subject, w_out, w_flags, w_binary);
        if (*trainc)
            return cmd_train(t_manifest, t_val, t_out, t_wflags, t_lflags.cfg, t_seed,
                             t_source);
        if (*predictc)
            return cmd_predict(p_model, p_manifest, p_subject, p_out, p_theta, p_source);
        if (*evalc)
            return cmd_eval(e_manifest, e_pred, e_gt, e_wflags, e_theta, e_width, format);
        if (*losoc) {
            const auto cfg =
                build_run_config(l_config, l_manifest, l_wflags, losoc, l_lflags, l_seeds,
                                 l_thresholds, l_widths, l_source, l_jobs, l_chunks);
            return cmd_loso(cfg, l_report, format);
        }
        if (*chunkc) {
            const auto cfg =
                build_run_config(c_config, c_manifest, c_wflags, chunkc, c_lflags, c_seeds,
                                 c_thresholds, c_widths, c_source, c_jobs, c_chunks);
            return cmd_chunk_eval(cfg, c_report, format);
        }
        if (*gradc) return cmd_gradcheck(g_seed, g_tol, g_instances);
        if (*reportc) return cmd_report(r_dir, r_csv);
    } catch (const tal::InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
