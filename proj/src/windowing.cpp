#include "tal/windowing.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace tal {

int WindowConfig::window_samples(double sampling_rate) const {
    if (window_seconds <= 0.0)
        throw InputError("window_seconds must be positive");
    if (overlap_fraction < 0.0 || overlap_fraction >= 1.0)
        throw InputError("overlap_fraction must lie in [0, 1)");
    if (sampling_rate <= 0.0)
        throw InputError("sampling rate must be positive");
    const int w = static_cast<int>(round_half_away(window_seconds * sampling_rate));
    if (w < 2)
        throw InputError("window of " + std::to_string(w) +
                         " samples is too short (need W >= 2)");
    return w;
}

int WindowConfig::stride_samples(double sampling_rate) const {
    const int w = window_samples(sampling_rate);
    const int stride = static_cast<int>(round_half_away(w * (1.0 - overlap_fraction)));
    if (stride < 1)
        throw InputError("window stride rounds to zero samples");
    return stride;
}

NormStats compute_norm_stats(const std::vector<const SensorStream*>& streams) {
    if (streams.empty())
        throw InputError("compute_norm_stats: no streams given");
    const std::size_t axes = streams.front()->num_axes();
    NormStats st;
    st.mean.assign(axes, 0.0);
    st.stddev.assign(axes, 0.0);
    std::size_t total = 0;
    for (const auto* s : streams) {
        if (s->num_axes() != axes)
            throw InputError("compute_norm_stats: axis count differs across streams");
        for (std::size_t r = 0; r < s->samples.rows; ++r)
            for (std::size_t a = 0; a < axes; ++a)
                st.mean[a] += s->samples(r, a);
        total += s->samples.rows;
    }
    for (auto& m : st.mean) m /= static_cast<double>(total);
    for (const auto* s : streams)
        for (std::size_t r = 0; r < s->samples.rows; ++r)
            for (std::size_t a = 0; a < axes; ++a) {
                const double d = s->samples(r, a) - st.mean[a];
                st.stddev[a] += d * d;
            }
    for (auto& v : st.stddev) {
        v = std::sqrt(v / static_cast<double>(total));
        if (v < 1e-12) v = 1.0;   // constant axis: centering only
    }
    return st;
}

std::vector<double> vectorize(const Matrix& window, bool axis_major) {
    if (window.empty())
        throw InputError("vectorize: empty window");
    const std::size_t w = window.rows, s = window.cols;
    std::vector<double> out(w * s);
    if (axis_major) {
        for (std::size_t a = 0; a < s; ++a)
            for (std::size_t r = 0; r < w; ++r)
                out[a * w + r] = window(r, a);
    } else {
        for (std::size_t r = 0; r < w; ++r)
            for (std::size_t a = 0; a < s; ++a)
                out[r * s + a] = window(r, a);
    }
    return out;
}

Matrix devectorize(const std::vector<double>& vec, std::size_t window_size,
                   std::size_t num_axes, bool axis_major) {
    if (vec.size() != window_size * num_axes)
        throw InputError("devectorize: vector length does not match W*S");
    Matrix m(window_size, num_axes);
    if (axis_major) {
        for (std::size_t a = 0; a < num_axes; ++a)
            for (std::size_t r = 0; r < window_size; ++r)
                m(r, a) = vec[a * window_size + r];
    } else {
        for (std::size_t r = 0; r < window_size; ++r)
            for (std::size_t a = 0; a < num_axes; ++a)
                m(r, a) = vec[r * num_axes + a];
    }
    return m;
}

WindowSequence make_windows(const SensorStream& stream, const WindowConfig& cfg,
                            const NormStats* stats) {
    const int w = cfg.window_samples(stream.sampling_rate);
    const int stride = cfg.stride_samples(stream.sampling_rate);
    const long long t_raw = static_cast<long long>(stream.num_samples());
    if (t_raw < w)
        throw InputError("stream '" + stream.subject_id + "' is shorter than one window");

    NormStats local;
    const NormStats* st = nullptr;
    if (cfg.normalize) {
        if (stats) {
            st = stats;
        } else {
            local = compute_norm_stats({&stream});
            st = &local;
        }
        if (st->mean.size() != stream.num_axes())
            throw InputError("normalization statistics do not match stream axes");
    }

    const std::size_t s = stream.num_axes();
    const std::size_t count =
        static_cast<std::size_t>((t_raw - w) / stride) + 1;

    WindowSequence ws;
    ws.subject_id = stream.subject_id;
    ws.window_size = w;
    ws.stride = stride;
    ws.total_samples = t_raw;
    ws.features = Matrix(count, static_cast<std::size_t>(w) * s);
    ws.window_starts.resize(count);

    Matrix win(w, s);
    for (std::size_t t = 0; t < count; ++t) {
        const long long start = static_cast<long long>(t) * stride;
        ws.window_starts[t] = start;
        for (int r = 0; r < w; ++r)
            for (std::size_t a = 0; a < s; ++a) {
                double v = stream.samples(static_cast<std::size_t>(start) + r, a);
                if (st) v = (v - st->mean[a]) / st->stddev[a];
                win(r, a) = v;
            }
        const auto vec = vectorize(win, cfg.axis_major);
        std::copy(vec.begin(), vec.end(), ws.features.row(t));
    }
    return ws;
}

int window_majority_label(const SensorStream& stream, std::size_t window_index,
                          const WindowConfig& cfg) {
    const int w = cfg.window_samples(stream.sampling_rate);
    const int stride = cfg.stride_samples(stream.sampling_rate);
    const std::size_t start = window_index * static_cast<std::size_t>(stride);
    if (start + w > stream.num_samples())
        throw InputError("window index out of range");
    std::unordered_map<int, int> counts;
    for (int r = 0; r < w; ++r)
        ++counts[stream.labels[start + r]];
    int best = -1, best_count = -1;
    bool tie = false;
    for (const auto& [lab, c] : counts) {
        if (c > best_count) {
            best = lab;
            best_count = c;
            tie = false;
        } else if (c == best_count) {
            tie = true;
        }
    }
    if (tie) return stream.labels[start + static_cast<std::size_t>(w / 2)];
    return best;
}

}  // namespace tal
