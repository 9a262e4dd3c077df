#include "tal/types.hpp"

#include <algorithm>

namespace tal {

void SensorStream::validate(int num_classes) const {
    if (samples.rows == 0 || samples.cols == 0)
        throw InputError("stream '" + subject_id + "': empty sample matrix");
    if (sampling_rate <= 0.0)
        throw InputError("stream '" + subject_id + "': sampling rate must be positive");
    if (labels.size() != samples.rows)
        throw InputError("stream '" + subject_id + "': label count " +
                         std::to_string(labels.size()) + " != sample count " +
                         std::to_string(samples.rows));
    if (!axes.empty() && axes.size() != samples.cols)
        throw InputError("stream '" + subject_id + "': axis names do not match sample columns");
    for (int lab : labels)
        if (lab < 0 || lab >= num_classes)
            throw InputError("stream '" + subject_id + "': label id " + std::to_string(lab) +
                             " outside class range");
}

int DatasetManifest::class_id(const std::string& cname) const {
    for (std::size_t i = 0; i < class_names.size(); ++i)
        if (class_names[i] == cname) return static_cast<int>(i);
    throw InputError("unknown class name '" + cname + "' in dataset '" + name + "'");
}

const SubjectEntry& DatasetManifest::subject(const std::string& id) const {
    for (const auto& s : subjects)
        if (s.id == id) return s;
    throw InputError("unknown subject '" + id + "' in dataset '" + name + "'");
}

void DatasetManifest::validate() const {
    if (class_names.empty())
        throw InputError("manifest '" + name + "': class list is empty");
    if (null_class && (*null_class < 0 || *null_class >= num_classes()))
        throw InputError("manifest '" + name + "': null_class out of range");
    if (sampling_rate <= 0.0)
        throw InputError("manifest '" + name + "': sampling_rate must be positive");
    for (std::size_t i = 0; i < subjects.size(); ++i)
        for (std::size_t j = i + 1; j < subjects.size(); ++j)
            if (subjects[i].id == subjects[j].id)
                throw InputError("manifest '" + name + "': duplicate subject id '" +
                                 subjects[i].id + "'");
}

void WindowSequence::validate() const {
    if (features.rows == 0)
        throw InputError("window sequence '" + subject_id + "' is empty");
    if (window_starts.size() != features.rows)
        throw InputError("window sequence '" + subject_id + "': start index count mismatch");
    if (window_size < 1 || stride < 1)
        throw InputError("window sequence '" + subject_id + "': invalid geometry");
    for (std::size_t t = 0; t + 1 < window_starts.size(); ++t)
        if (window_starts[t + 1] - window_starts[t] != stride)
            throw InputError("window sequence '" + subject_id + "': non-constant stride");
    if (!window_starts.empty() &&
        window_starts.back() + window_size > total_samples)
        throw InputError("window sequence '" + subject_id + "': window exceeds stream length");
}

double tiou(double a_start, double a_end, double b_start, double b_end) {
    if (!(a_start < a_end) || !(b_start < b_end))
        throw InputError("tiou: degenerate interval (start >= end)");
    const double inter =
        std::max(0.0, std::min(a_end, b_end) - std::max(a_start, b_start));
    if (inter <= 0.0) return 0.0;
    const double uni = (a_end - a_start) + (b_end - b_start) - inter;
    return inter / uni;
}

double tiou(const Segment& a, const Segment& b) {
    return tiou(a.start, a.end, b.start, b.end);
}

SampleRange segment_to_sample_range(const Segment& seg, const WindowSequence& ws) {
    const long long t_raw = ws.total_samples;
    long long begin = round_half_away(seg.start * ws.stride);
    long long end = round_half_away(seg.end * ws.stride) + (ws.window_size - ws.stride);
    begin = std::clamp(begin, 0LL, t_raw);
    end = std::clamp(end, 0LL, t_raw);
    if (end < begin) end = begin;
    return {begin, end};
}

}  // namespace tal
