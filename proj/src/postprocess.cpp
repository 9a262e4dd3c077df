#include "tal/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tal/ingest.hpp"

namespace tal {

std::vector<Segment> threshold_segments(const std::vector<Segment>& segments,
                                        double theta) {
    if (theta < 0.0 || theta > 1.0)
        throw InputError("threshold must lie in [0, 1]");
    std::vector<Segment> out;
    out.reserve(segments.size());
    for (const auto& s : segments)
        if (s.score >= theta) out.push_back(s);
    return out;
}

SampleTimeline rasterize_segments(const std::vector<Segment>& segments,
                                  const WindowSequence& ws, long long t_raw,
                                  std::optional<int> null_class) {
    const int background = null_class.value_or(0);
    SampleTimeline tl;
    tl.sampling_rate = 0.0;
    tl.labels.assign(static_cast<std::size_t>(t_raw), background);

    std::vector<std::size_t> order(segments.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const Segment& sa = segments[a];
        const Segment& sb = segments[b];
        if (sa.score != sb.score) return sa.score < sb.score;
        if (sa.start != sb.start) return sa.start < sb.start;
        return sa.label < sb.label;
    });

    for (std::size_t idx : order) {
        const Segment& s = segments[idx];
        long long begin = round_half_away(s.start * ws.stride);
        long long end = round_half_away(s.end * ws.stride);
        begin = std::clamp(begin, 0LL, t_raw);
        end = std::clamp(end, 0LL, t_raw);
        for (long long i = begin; i < end; ++i)
            tl.labels[static_cast<std::size_t>(i)] = s.label;
    }
    return tl;
}

SampleTimeline rasterize_windows(const std::vector<int>& window_predictions,
                                 const WindowSequence& ws, long long t_raw) {
    if (window_predictions.size() != ws.size())
        throw InputError("rasterize_windows: one prediction per window required");
    SampleTimeline tl;
    tl.labels.assign(static_cast<std::size_t>(t_raw), 0);
    long long painted_end = 0;
    for (std::size_t t = 0; t < window_predictions.size(); ++t) {
        const long long begin = ws.window_starts[t];
        const long long end = std::min<long long>(begin + ws.window_size, t_raw);
        for (long long i = begin; i < end; ++i)
            tl.labels[static_cast<std::size_t>(i)] = window_predictions[t];
        painted_end = std::max(painted_end, end);
    }
    // Trailing samples of a dropped partial window inherit the last label.
    for (long long i = painted_end; i < t_raw; ++i)
        tl.labels[static_cast<std::size_t>(i)] = window_predictions.back();
    return tl;
}

SampleTimeline majority_filter(const SampleTimeline& timeline, double width_seconds) {
    if (width_seconds < 0.0)
        throw InputError("majority filter width must be >= 0");
    const std::size_t n = timeline.labels.size();
    if (n == 0) return timeline;
    const long long half =
        static_cast<long long>(std::floor(width_seconds * timeline.sampling_rate / 2.0));
    if (half <= 0) return timeline;  // k = 1

    int max_label = 0;
    for (int lab : timeline.labels) max_label = std::max(max_label, lab);
    std::vector<long long> counts(static_cast<std::size_t>(max_label) + 1, 0);

    SampleTimeline out = timeline;
    long long lo = 0, hi = -1;  // inclusive window bounds currently counted
    for (std::size_t i = 0; i < n; ++i) {
        const long long want_lo = std::max<long long>(0, static_cast<long long>(i) - half);
        const long long want_hi =
            std::min<long long>(static_cast<long long>(n) - 1, static_cast<long long>(i) + half);
        while (hi < want_hi) ++counts[static_cast<std::size_t>(timeline.labels[++hi])];
        while (lo < want_lo) --counts[static_cast<std::size_t>(timeline.labels[lo++])];

        long long best = -1;
        int best_label = -1;
        bool tie = false;
        for (std::size_t c = 0; c < counts.size(); ++c) {
            if (counts[c] > best) {
                best = counts[c];
                best_label = static_cast<int>(c);
                tie = false;
            } else if (counts[c] == best && counts[c] > 0) {
                tie = true;
            }
        }
        out.labels[i] = tie ? timeline.labels[i] : best_label;
    }
    return out;
}

std::vector<Segment> timeline_to_segments(const SampleTimeline& timeline,
                                          int stride_samples,
                                          std::optional<int> null_class) {
    return labels_to_segments(timeline, stride_samples, null_class);
}

const std::map<std::string, double>& default_majority_widths() {
    static const std::map<std::string, double> widths = {
        {"opportunity", 2.5}, {"wetlab", 20.0}, {"sbhar", 5.0},
        {"wear", 15.0},       {"hangtime", 5.0}, {"rwhar", 40.0},
    };
    return widths;
}

void write_segments_csv(const std::string& path, const SegmentSet& segments,
                        const DatasetManifest& manifest) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write segments '" + path + "'");
    out << "subject_id,start_window,end_window,label,score\n";
    out.precision(12);
    for (const auto& [subject, segs] : segments)
        for (const auto& s : segs)
            out << subject << ',' << s.start << ',' << s.end << ','
                << manifest.class_names.at(s.label) << ',' << s.score << '\n';
}

SegmentSet read_segments_csv(const std::string& path, const DatasetManifest& manifest) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open segments '" + path + "'");
    std::string line;
    if (!std::getline(in, line))
        throw InputError("segments '" + path + "' is empty");
    SegmentSet out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string subject, start, end, label, score;
        if (!std::getline(ss, subject, ',') || !std::getline(ss, start, ',') ||
            !std::getline(ss, end, ',') || !std::getline(ss, label, ',') ||
            !std::getline(ss, score))
            throw InputError("segments '" + path + "' row " + std::to_string(row) +
                             ": expected 5 fields");
        Segment s;
        try {
            s.start = std::stod(start);
            s.end = std::stod(end);
            s.score = std::stod(score);
        } catch (const std::exception&) {
            throw InputError("segments '" + path + "' row " + std::to_string(row) +
                             ": non-numeric boundary or score");
        }
        s.label = manifest.class_id(label);
        if (!(s.start < s.end))
            throw InputError("segments '" + path + "' row " + std::to_string(row) +
                             ": start must be < end");
        out[subject].push_back(s);
    }
    return out;
}

}  // namespace tal
