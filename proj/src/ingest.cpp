#include "tal/ingest.hpp"

#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace tal {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_number(const std::string& s, const std::string& context) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw InputError(context + ": non-numeric value '" + s + "'");
    }
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

std::uint32_t fnv1a32(const std::string& text) {
    std::uint32_t h = 2166136261u;
    for (unsigned char c : text) {
        h ^= c;
        h *= 16777619u;
    }
    return h;
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open manifest '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InputError("manifest '" + path + "': invalid JSON: " + e.what());
    }

    DatasetManifest m;
    try {
        m.name = j.value("name", std::string("dataset"));
        m.class_names = j.at("class_names").get<std::vector<std::string>>();
        m.sampling_rate = j.at("sampling_rate").get<double>();
        if (j.contains("axes")) m.axes = j.at("axes").get<std::vector<std::string>>();
        if (j.contains("null_class") && !j.at("null_class").is_null())
            m.null_class = j.at("null_class").get<int>();
        const auto base = fs::path(path).parent_path();
        for (const auto& js : j.at("subjects")) {
            SubjectEntry e;
            e.id = js.at("id").get<std::string>();
            if (js.contains("stream"))
                e.stream_path = (base / js.at("stream").get<std::string>()).string();
            if (js.contains("embeddings"))
                e.embeddings_path = (base / js.at("embeddings").get<std::string>()).string();
            m.subjects.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw InputError("manifest '" + path + "': schema error: " + e.what());
    }

    // Null class is id 0 everywhere downstream; rotate the declared class to
    // the front if the manifest author put it elsewhere.
    if (m.null_class && *m.null_class != 0) {
        const int k = *m.null_class;
        if (k < 0 || k >= m.num_classes())
            throw InputError("manifest '" + path + "': null_class out of range");
        std::vector<std::string> reordered;
        reordered.push_back(m.class_names[k]);
        for (int i = 0; i < m.num_classes(); ++i)
            if (i != k) reordered.push_back(m.class_names[i]);
        m.class_names = std::move(reordered);
        m.null_class = 0;
    }
    m.validate();
    return m;
}

SensorStream load_stream(const DatasetManifest& manifest, const std::string& subject_id) {
    const auto& entry = manifest.subject(subject_id);
    if (entry.stream_path.empty())
        throw InputError("subject '" + subject_id + "' has no stream path");
    std::ifstream in(entry.stream_path);
    if (!in) throw InputError("cannot open stream '" + entry.stream_path + "'");

    std::string line;
    if (!std::getline(in, line))
        throw InputError("stream '" + entry.stream_path + "' is empty");
    const auto header = split_csv_line(line);
    if (header.size() < 3)
        throw InputError("stream '" + entry.stream_path +
                         "': header needs sample_index, axes and label columns");
    const std::size_t s = header.size() - 2;
    if (!manifest.axes.empty() && s != manifest.axes.size())
        throw InputError("stream '" + entry.stream_path + "': expected " +
                         std::to_string(manifest.axes.size()) + " axes, found " +
                         std::to_string(s));

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw InputError("stream '" + entry.stream_path + "' row " +
                             std::to_string(rows + 2) + ": expected " +
                             std::to_string(header.size()) + " fields, found " +
                             std::to_string(fields.size()));
        for (std::size_t a = 0; a < s; ++a)
            values.push_back(parse_number(fields[1 + a],
                                          "stream '" + entry.stream_path + "' row " +
                                              std::to_string(rows + 2)));
        labels.push_back(manifest.class_id(trim(fields.back())));
        ++rows;
    }
    if (rows == 0)
        throw InputError("stream '" + entry.stream_path + "' has no data rows");

    SensorStream st;
    st.subject_id = subject_id;
    st.sampling_rate = manifest.sampling_rate;
    st.axes = manifest.axes;
    st.samples = Matrix(rows, s);
    std::copy(values.begin(), values.end(), st.samples.data.begin());
    st.labels = std::move(labels);
    st.validate(manifest.num_classes());
    return st;
}

void write_stream_csv(const std::string& path, const SensorStream& stream,
                      const DatasetManifest& manifest) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write stream '" + path + "'");
    out << "sample_index";
    for (std::size_t a = 0; a < stream.num_axes(); ++a)
        out << ',' << (a < stream.axes.size() ? stream.axes[a] : "axis_" + std::to_string(a));
    out << ",label\n";
    out.precision(9);
    for (std::size_t r = 0; r < stream.num_samples(); ++r) {
        out << r;
        for (std::size_t a = 0; a < stream.num_axes(); ++a)
            out << ',' << stream.samples(r, a);
        out << ',' << manifest.class_names.at(stream.labels[r]) << '\n';
    }
}

std::vector<Segment> labels_to_segments(const SampleTimeline& timeline,
                                        int stride_samples,
                                        std::optional<int> null_class) {
    if (timeline.labels.empty())
        throw InputError("labels_to_segments: empty timeline");
    if (stride_samples < 1)
        throw InputError("labels_to_segments: stride must be >= 1");
    std::vector<Segment> out;
    const std::size_t n = timeline.labels.size();
    std::size_t run_start = 0;
    for (std::size_t i = 1; i <= n; ++i) {
        if (i == n || timeline.labels[i] != timeline.labels[run_start]) {
            const int lab = timeline.labels[run_start];
            if (!null_class || lab != *null_class) {
                Segment s;
                s.start = static_cast<double>(run_start) / stride_samples;
                s.end = static_cast<double>(i) / stride_samples;
                s.label = lab;
                s.score = 1.0;
                out.push_back(s);
            }
            run_start = i;
        }
    }
    return out;
}

GroundTruth build_ground_truth(const SensorStream& stream, int stride_samples,
                               std::optional<int> null_class) {
    GroundTruth gt;
    gt.subject_id = stream.subject_id;
    gt.timeline.labels = stream.labels;
    gt.timeline.sampling_rate = stream.sampling_rate;
    gt.segments = labels_to_segments(gt.timeline, stride_samples, null_class);
    return gt;
}

std::vector<LosoSplit> loso_splits(const DatasetManifest& manifest) {
    if (manifest.subjects.size() < 2)
        throw InputError("LOSO validation needs at least 2 subjects");
    std::vector<LosoSplit> out;
    for (const auto& held : manifest.subjects) {
        LosoSplit sp;
        sp.validation_subject = held.id;
        for (const auto& other : manifest.subjects)
            if (other.id != held.id) sp.training_subjects.push_back(other.id);
        out.push_back(std::move(sp));
    }
    return out;
}

namespace {

WindowSequence finish_embeddings(Matrix features, const std::string& subject_id,
                                 int window_size, int stride_samples,
                                 long long expected_windows, const std::string& path) {
    if (features.rows == 0)
        throw InputError("embeddings '" + path + "' contain no rows");
    if (expected_windows >= 0 &&
        static_cast<long long>(features.rows) != expected_windows)
        throw InputError("embeddings '" + path + "': " + std::to_string(features.rows) +
                         " rows but expected " + std::to_string(expected_windows) +
                         " windows");
    WindowSequence ws;
    ws.subject_id = subject_id;
    ws.window_size = window_size;
    ws.stride = stride_samples;
    ws.window_starts.resize(features.rows);
    for (std::size_t t = 0; t < features.rows; ++t)
        ws.window_starts[t] = static_cast<long long>(t) * stride_samples;
    ws.total_samples = ws.window_starts.back() + window_size;
    ws.features = std::move(features);
    return ws;
}

WindowSequence load_embeddings_binary(const std::string& path, const std::string& subject_id,
                                      int window_size, int stride_samples,
                                      long long expected_windows) {
    std::ifstream in(path, std::ios::binary);
    std::uint32_t header[3];
    in.read(reinterpret_cast<char*>(header), sizeof header);
    if (!in) throw InputError("embeddings '" + path + "': truncated header");
    const std::uint32_t rows = header[0], dims = header[1], hash = header[2];
    if (hash != fnv1a32(subject_id))
        throw InputError("embeddings '" + path + "': subject hash mismatch for '" +
                         subject_id + "'");
    if (rows == 0 || dims == 0)
        throw InputError("embeddings '" + path + "': empty matrix");
    std::vector<float> buf(static_cast<std::size_t>(rows) * dims);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw InputError("embeddings '" + path + "': truncated payload");
    Matrix f(rows, dims);
    for (std::size_t i = 0; i < buf.size(); ++i) f.data[i] = buf[i];
    return finish_embeddings(std::move(f), subject_id, window_size, stride_samples,
                             expected_windows, path);
}

}  // namespace

WindowSequence load_embeddings(const std::string& path, const std::string& subject_id,
                               int window_size, int stride_samples,
                               long long expected_windows) {
    if (window_size < 1 || stride_samples < 1)
        throw InputError("load_embeddings: invalid window geometry");
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw InputError("cannot open embeddings '" + path + "'");
    // Heuristic: CSV content starts with a digit, sign, or dot.
    const int first = probe.peek();
    probe.close();
    if (first == EOF) throw InputError("embeddings '" + path + "' are empty");
    const bool looks_csv = std::isdigit(first) || first == '-' || first == '+' ||
                           first == '.' || std::isspace(first);
    if (!looks_csv)
        return load_embeddings_binary(path, subject_id, window_size, stride_samples,
                                      expected_windows);

    std::ifstream in(path);
    std::string line;
    std::vector<double> values;
    std::size_t rows = 0, dims = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto fields = split_csv_line(line);
        if (dims == 0) dims = fields.size();
        if (fields.size() != dims)
            throw InputError("embeddings '" + path + "' row " + std::to_string(rows + 1) +
                             ": inconsistent dimension");
        for (const auto& f : fields)
            values.push_back(parse_number(f, "embeddings '" + path + "'"));
        ++rows;
    }
    if (rows == 0) throw InputError("embeddings '" + path + "' contain no rows");
    Matrix f(rows, dims);
    std::copy(values.begin(), values.end(), f.data.begin());
    return finish_embeddings(std::move(f), subject_id, window_size, stride_samples,
                             expected_windows, path);
}

void write_embeddings_csv(const std::string& path, const WindowSequence& ws) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write embeddings '" + path + "'");
    out.precision(9);
    for (std::size_t t = 0; t < ws.size(); ++t) {
        for (std::size_t d = 0; d < ws.dim(); ++d) {
            if (d) out << ',';
            out << ws.features(t, d);
        }
        out << '\n';
    }
}

void write_embeddings_binary(const std::string& path, const WindowSequence& ws) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write embeddings '" + path + "'");
    const std::uint32_t header[3] = {static_cast<std::uint32_t>(ws.size()),
                                     static_cast<std::uint32_t>(ws.dim()),
                                     fnv1a32(ws.subject_id)};
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    std::vector<float> buf(ws.features.data.size());
    for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = static_cast<float>(ws.features.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

}  // namespace tal
