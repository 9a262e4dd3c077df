#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>

#include "tal/harness.hpp"
#include "tal/ingest.hpp"
#include "tal/localizer.hpp"
#include "tal/metrics.hpp"
#include "tal/postprocess.hpp"
#include "tal/types.hpp"
#include "tal/windowing.hpp"

namespace py = pybind11;

namespace {

tal::Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw tal::InputError("expected a 2-D array");
    tal::Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), m.data.begin());
    return m;
}

py::array_t<double> from_matrix(const tal::Matrix& m) {
    py::array_t<double> a({m.rows, m.cols});
    std::copy(m.data.begin(), m.data.end(), a.mutable_data());
    return a;
}

tal::WindowSequence sequence_from_features(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& features,
    int window_size, int stride) {
    tal::WindowSequence ws;
    ws.subject_id = "py";
    ws.window_size = window_size;
    ws.stride = stride;
    ws.features = to_matrix(features);
    ws.window_starts.resize(ws.features.rows);
    for (std::size_t t = 0; t < ws.features.rows; ++t)
        ws.window_starts[t] = static_cast<long long>(t) * stride;
    ws.total_samples =
        ws.features.rows ? ws.window_starts.back() + window_size : 0;
    return ws;
}

tal::LocalizerConfig config_from_dict(const py::dict& d) {
    tal::LocalizerConfig cfg;
    for (auto item : d) {
        const std::string key = py::str(item.first);
        if (key == "hidden_dim") cfg.hidden_dim = py::cast<int>(item.second);
        else if (key == "pyramid_levels") cfg.pyramid_levels = py::cast<int>(item.second);
        else if (key == "head_layers") cfg.head_layers = py::cast<int>(item.second);
        else if (key == "focal_gamma") cfg.focal_gamma = py::cast<double>(item.second);
        else if (key == "focal_alpha") cfg.focal_alpha = py::cast<double>(item.second);
        else if (key == "reg_loss_weight") cfg.reg_loss_weight = py::cast<double>(item.second);
        else if (key == "learning_rate") cfg.learning_rate = py::cast<double>(item.second);
        else if (key == "momentum") cfg.momentum = py::cast<double>(item.second);
        else if (key == "weight_decay") cfg.weight_decay = py::cast<double>(item.second);
        else if (key == "epochs") cfg.epochs = py::cast<int>(item.second);
        else if (key == "seed") cfg.seed = py::cast<std::uint64_t>(item.second);
        else if (key == "decode_epsilon") cfg.decode_epsilon = py::cast<double>(item.second);
        else if (key == "regression_ranges")
            cfg.regression_ranges =
                py::cast<std::vector<std::pair<double, double>>>(item.second);
        else throw tal::InputError("unknown localizer config key '" + key + "'");
    }
    return cfg;
}

// Thin trainable wrapper over the core model for in-memory feature arrays.
struct PyLocalizer {
    tal::LocalizerModel model;
    std::vector<double> loss_curve;

    explicit PyLocalizer(tal::LocalizerModel m) : model(std::move(m)) {}

    std::vector<tal::Segment> predict(const py::array_t<double>& features,
                                      double epsilon) const {
        const auto ws = sequence_from_features(features, 1, 1);
        const auto fo = model.forward(ws);
        return tal::decode(fo, static_cast<double>(ws.size()), epsilon);
    }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Temporal action localization toolkit for inertial sensor streams";

    py::register_exception<tal::InputError>(m, "InputError", PyExc_ValueError);

    py::class_<tal::Segment>(m, "Segment")
        .def(py::init<>())
        .def(py::init([](double start, double end, int label, double score) {
                 return tal::Segment{start, end, label, score};
             }),
             py::arg("start"), py::arg("end"), py::arg("label"), py::arg("score") = 1.0)
        .def_readwrite("start", &tal::Segment::start)
        .def_readwrite("end", &tal::Segment::end)
        .def_readwrite("label", &tal::Segment::label)
        .def_readwrite("score", &tal::Segment::score)
        .def("__repr__", [](const tal::Segment& s) {
            return "Segment(start=" + std::to_string(s.start) +
                   ", end=" + std::to_string(s.end) + ", label=" + std::to_string(s.label) +
                   ", score=" + std::to_string(s.score) + ")";
        });

    m.def("tiou",
          [](double a0, double a1, double b0, double b1) { return tal::tiou(a0, a1, b0, b1); },
          py::arg("a_start"), py::arg("a_end"), py::arg("b_start"), py::arg("b_end"));

    m.def("vectorize",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& w,
             bool axis_major) {
              const auto v = tal::vectorize(to_matrix(w), axis_major);
              return py::array_t<double>(static_cast<py::ssize_t>(v.size()), v.data());
          },
          py::arg("window"), py::arg("axis_major") = false);

    m.def("devectorize",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& v,
             std::size_t window_size, std::size_t num_axes, bool axis_major) {
              std::vector<double> vec(v.data(), v.data() + v.size());
              return from_matrix(tal::devectorize(vec, window_size, num_axes, axis_major));
          },
          py::arg("vector"), py::arg("window_size"), py::arg("num_axes"),
          py::arg("axis_major") = false);

    m.def("sliding_windows",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& samples,
             double sampling_rate, double window_seconds, double overlap, bool normalize,
             bool axis_major) {
              tal::SensorStream stream;
              stream.subject_id = "py";
              stream.sampling_rate = sampling_rate;
              stream.samples = to_matrix(samples);
              stream.labels.assign(stream.samples.rows, 0);
              tal::WindowConfig cfg;
              cfg.window_seconds = window_seconds;
              cfg.overlap_fraction = overlap;
              cfg.normalize = normalize;
              cfg.axis_major = axis_major;
              const auto ws = tal::make_windows(stream, cfg);
              py::dict out;
              out["features"] = from_matrix(ws.features);
              out["window_starts"] = ws.window_starts;
              out["window_size"] = ws.window_size;
              out["stride"] = ws.stride;
              return out;
          },
          py::arg("samples"), py::arg("sampling_rate"), py::arg("window_seconds") = 1.0,
          py::arg("overlap") = 0.5, py::arg("normalize") = true,
          py::arg("axis_major") = false);

    m.def("labels_to_segments",
          [](const std::vector<int>& labels, int stride, std::optional<int> null_class) {
              tal::SampleTimeline tl;
              tl.labels = labels;
              return tal::labels_to_segments(tl, stride, null_class);
          },
          py::arg("labels"), py::arg("stride") = 1, py::arg("null_class") = std::nullopt);

    m.def("threshold_segments", &tal::threshold_segments, py::arg("segments"),
          py::arg("theta"));

    m.def("rasterize_segments",
          [](const std::vector<tal::Segment>& segments, int window_size, int stride,
             long long t_raw, std::optional<int> null_class) {
              tal::WindowSequence ws;
              ws.window_size = window_size;
              ws.stride = stride;
              ws.total_samples = t_raw;
              return tal::rasterize_segments(segments, ws, t_raw, null_class).labels;
          },
          py::arg("segments"), py::arg("window_size"), py::arg("stride"), py::arg("t_raw"),
          py::arg("null_class") = std::nullopt);

    m.def("rasterize_windows",
          [](const std::vector<int>& preds, int window_size, int stride, long long t_raw) {
              tal::WindowSequence ws;
              ws.window_size = window_size;
              ws.stride = stride;
              ws.features = tal::Matrix(preds.size(), 1);
              ws.window_starts.resize(preds.size());
              for (std::size_t t = 0; t < preds.size(); ++t)
                  ws.window_starts[t] = static_cast<long long>(t) * stride;
              ws.total_samples = t_raw;
              return tal::rasterize_windows(preds, ws, t_raw).labels;
          },
          py::arg("window_predictions"), py::arg("window_size"), py::arg("stride"),
          py::arg("t_raw"));

    m.def("majority_filter",
          [](const std::vector<int>& labels, double sampling_rate, double width_seconds) {
              tal::SampleTimeline tl;
              tl.labels = labels;
              tl.sampling_rate = sampling_rate;
              return tal::majority_filter(tl, width_seconds).labels;
          },
          py::arg("labels"), py::arg("sampling_rate"), py::arg("width_seconds"));

    m.def("timeline_to_segments",
          [](const std::vector<int>& labels, int stride, std::optional<int> null_class) {
              tal::SampleTimeline tl;
              tl.labels = labels;
              return tal::timeline_to_segments(tl, stride, null_class);
          },
          py::arg("labels"), py::arg("stride") = 1, py::arg("null_class") = std::nullopt);

    m.def("focal_loss", &tal::focal_loss, py::arg("class_probs"), py::arg("target_class"),
          py::arg("gamma") = 2.0, py::arg("alpha") = 0.25);

    m.def("giou_loss_1d", &tal::giou_loss_1d, py::arg("pred_d_start"),
          py::arg("pred_d_end"), py::arg("target_d_start"), py::arg("target_d_end"));

    m.def("average_precision", &tal::average_precision, py::arg("predictions"),
          py::arg("ground_truth"), py::arg("tiou_threshold"));

    m.def("map_suite",
          [](const tal::SegmentSet& preds, const tal::SegmentSet& gts,
             const std::vector<double>& thresholds) {
              const auto r = tal::map_suite(preds, gts, thresholds);
              py::dict out;
              py::dict per;
              for (const auto& [thr, v] : r.per_tiou) per[py::float_(thr)] = v;
              out["per_tiou"] = per;
              out["avg_map"] = r.avg;
              return out;
          },
          py::arg("predictions"), py::arg("ground_truth"),
          py::arg("thresholds") = tal::default_tiou_thresholds());

    m.def("sample_metrics",
          [](const std::vector<int>& pred, const std::vector<int>& gt, int num_classes,
             std::optional<int> null_class, const std::string& averaging) {
              tal::SampleTimeline p, g;
              p.labels = pred;
              g.labels = gt;
              const auto sm = tal::sample_metrics(
                  p, g, num_classes, null_class,
                  averaging == "weighted" ? tal::Averaging::Weighted : tal::Averaging::Macro);
              py::dict out;
              out["precision"] = sm.precision;
              out["recall"] = sm.recall;
              out["f1"] = sm.f1;
              out["per_class_accuracy"] = sm.per_class_accuracy;
              out["null_accuracy"] = sm.null_accuracy;
              out["confusion"] = sm.confusion;
              return out;
          },
          py::arg("pred"), py::arg("gt"), py::arg("num_classes"),
          py::arg("null_class") = std::nullopt, py::arg("averaging") = "macro");

    m.def("ward_errors",
          [](const std::vector<int>& pred, const std::vector<int>& gt, int num_classes,
             std::optional<int> null_class) {
              tal::SampleTimeline p, g;
              p.labels = pred;
              g.labels = gt;
              const auto w = tal::ward_errors(p, g, num_classes, null_class);
              py::dict out;
              out["UR"] = w.underfill;
              out["OR"] = w.overfill;
              out["DR"] = w.deletion;
              out["IR"] = w.insertion;
              out["FR"] = w.fragmentation;
              out["MR"] = w.merge;
              return out;
          },
          py::arg("pred"), py::arg("gt"), py::arg("num_classes"),
          py::arg("null_class") = std::nullopt);

    m.def("length_bins",
          [](const std::vector<tal::Segment>& segs, int stride, double sampling_rate) {
              const auto b = tal::length_bins(segs, stride, sampling_rate);
              py::dict out;
              out["XS"] = b.xs;
              out["S"] = b.s;
              out["M"] = b.m;
              out["L"] = b.l;
              out["XL"] = b.xl;
              return out;
          },
          py::arg("segments"), py::arg("stride"), py::arg("sampling_rate"));

    py::class_<PyLocalizer>(m, "Localizer")
        .def_static(
            "train",
            [](const std::vector<py::array_t<double, py::array::c_style |
                                                         py::array::forcecast>>& features,
               const std::vector<std::vector<tal::Segment>>& segments, int num_classes,
               const py::dict& config) {
                if (features.size() != segments.size())
                    throw tal::InputError("one segment list per feature sequence required");
                if (features.empty())
                    throw tal::InputError("at least one training sequence required");
                std::vector<tal::WindowSequence> ws;
                ws.reserve(features.size());
                for (const auto& f : features) ws.push_back(sequence_from_features(f, 1, 1));
                std::vector<tal::TrainSample> samples;
                for (std::size_t i = 0; i < ws.size(); ++i)
                    samples.push_back({&ws[i], segments[i]});
                tal::LocalizerModel model(static_cast<int>(ws.front().dim()), num_classes,
                                          config_from_dict(config));
                const auto result = tal::train(model, samples);
                PyLocalizer wrapper(std::move(model));
                wrapper.loss_curve = result.epoch_mean_loss;
                return wrapper;
            },
            py::arg("features"), py::arg("segments"), py::arg("num_classes"),
            py::arg("config") = py::dict())
        .def_static("load",
                    [](const std::string& path) {
                        return PyLocalizer(tal::LocalizerModel::load(path));
                    },
                    py::arg("path"))
        .def("predict", &PyLocalizer::predict, py::arg("features"),
             py::arg("epsilon") = 1e-3)
        .def("save", [](const PyLocalizer& l, const std::string& path) { l.model.save(path); },
             py::arg("path"))
        .def_property_readonly("loss_curve",
                               [](const PyLocalizer& l) { return l.loss_curve; })
        .def_property_readonly("num_classes",
                               [](const PyLocalizer& l) { return l.model.num_fg_classes(); });

    m.def("gradcheck_max_error",
          [](std::uint64_t seed) {
              tal::LocalizerConfig cfg;
              cfg.hidden_dim = 6;
              cfg.pyramid_levels = 3;
              cfg.epochs = 0;
              cfg.seed = seed;
              tal::LocalizerModel model(3, 2, cfg);
              std::mt19937_64 rng(seed + 17);
              tal::WindowSequence ws;
              ws.subject_id = "gradcheck";
              ws.window_size = 1;
              ws.stride = 1;
              ws.features = tal::Matrix(7, 3);
              for (auto& v : ws.features.data)
                  v = static_cast<double>(rng() >> 11) * 0x1.0p-52 - 1.0;
              ws.window_starts.resize(7);
              for (std::size_t t = 0; t < 7; ++t) ws.window_starts[t] = (long long)t;
              ws.total_samples = 8;
              tal::TrainSample sample;
              sample.windows = &ws;
              sample.gt_segments = {{1.0, 4.0, 0, 1.0}, {5.0, 7.0, 1, 1.0}};
              return tal::check_gradients(model, sample).max_rel_error;
          },
          py::arg("seed") = 1);

    m.def("write_synthetic_dataset",
          [](const std::string& dir, int num_classes, int num_subjects, double noise,
             std::uint64_t seed, double sampling_rate, int num_axes) {
              tal::SynthSpec spec;
              spec.num_classes = num_classes;
              spec.num_subjects = num_subjects;
              spec.noise_stddev = noise;
              spec.seed = seed;
              spec.sampling_rate = sampling_rate;
              spec.num_axes = num_axes;
              tal::write_synthetic_dataset(tal::make_synthetic_dataset(spec), dir);
          },
          py::arg("dir"), py::arg("num_classes") = 3, py::arg("num_subjects") = 5,
          py::arg("noise") = 0.05, py::arg("seed") = 7, py::arg("sampling_rate") = 30.0,
          py::arg("num_axes") = 3);

    m.attr("__version__") = "0.1.0";
}
