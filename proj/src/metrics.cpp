#include "tal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tal/ingest.hpp"

namespace tal {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Run {
    std::size_t begin = 0;
    std::size_t end = 0;  // half-open
};

std::vector<Run> runs_of(const std::vector<int>& labels, int cls) {
    std::vector<Run> out;
    std::size_t i = 0;
    const std::size_t n = labels.size();
    while (i < n) {
        if (labels[i] != cls) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && labels[j] == cls) ++j;
        out.push_back({i, j});
        i = j;
    }
    return out;
}

bool overlaps(const Run& a, const Run& b) {
    return a.begin < b.end && b.begin < a.end;
}

}  // namespace

SampleMetrics sample_metrics(const SampleTimeline& pred, const SampleTimeline& gt,
                             int num_classes, std::optional<int> null_class,
                             Averaging averaging) {
    if (pred.labels.size() != gt.labels.size())
        throw InputError("sample_metrics: prediction/ground-truth length mismatch");
    if (pred.labels.empty())
        throw InputError("sample_metrics: empty timelines");

    SampleMetrics m;
    m.confusion.assign(num_classes, std::vector<long long>(num_classes, 0));
    for (std::size_t i = 0; i < gt.labels.size(); ++i)
        ++m.confusion[gt.labels[i]][pred.labels[i]];

    m.per_class_precision.assign(num_classes, kNaN);
    m.per_class_recall.assign(num_classes, kNaN);
    m.per_class_f1.assign(num_classes, kNaN);
    m.per_class_accuracy.assign(num_classes, kNaN);

    std::vector<long long> gt_count(num_classes, 0), pred_count(num_classes, 0);
    for (int c = 0; c < num_classes; ++c)
        for (int k = 0; k < num_classes; ++k) {
            gt_count[c] += m.confusion[c][k];
            pred_count[c] += m.confusion[k][c];
        }

    double sum_p = 0.0, sum_r = 0.0, sum_f = 0.0, weight_total = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        if (gt_count[c] == 0) continue;  // absent classes are excluded
        const double tp = static_cast<double>(m.confusion[c][c]);
        const double p = pred_count[c] > 0 ? tp / pred_count[c] : 0.0;
        const double r = tp / gt_count[c];
        const double f = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
        m.per_class_precision[c] = 100.0 * p;
        m.per_class_recall[c] = 100.0 * r;
        m.per_class_f1[c] = 100.0 * f;
        m.per_class_accuracy[c] = 100.0 * r;
        const double w =
            averaging == Averaging::Macro ? 1.0 : static_cast<double>(gt_count[c]);
        sum_p += w * p;
        sum_r += w * r;
        sum_f += w * f;
        weight_total += w;
    }
    if (weight_total > 0.0) {
        m.precision = 100.0 * sum_p / weight_total;
        m.recall = 100.0 * sum_r / weight_total;
        m.f1 = 100.0 * sum_f / weight_total;
    }
    m.null_accuracy =
        (null_class && gt_count[*null_class] > 0) ? m.per_class_recall[*null_class] : kNaN;
    return m;
}

WardRatios ward_errors(const SampleTimeline& pred, const SampleTimeline& gt,
                       int num_classes, std::optional<int> null_class) {
    if (pred.labels.size() != gt.labels.size())
        throw InputError("ward_errors: prediction/ground-truth length mismatch");
    const std::size_t n = gt.labels.size();
    if (n == 0) throw InputError("ward_errors: empty timelines");

    long long underfill = 0, overfill = 0, deletion = 0, insertion = 0,
              fragmentation = 0, merge = 0;

    for (int c = 0; c < num_classes; ++c) {
        if (null_class && c == *null_class) continue;
        const auto gt_runs = runs_of(gt.labels, c);
        const auto pred_runs = runs_of(pred.labels, c);

        for (const auto& g : gt_runs) {
            int overlapping = 0;
            for (const auto& p : pred_runs)
                if (overlaps(g, p)) ++overlapping;
            long long uncovered = 0;
            for (std::size_t i = g.begin; i < g.end; ++i)
                if (pred.labels[i] != c) ++uncovered;
            if (overlapping == 0)
                deletion += static_cast<long long>(g.end - g.begin);
            else if (overlapping == 1)
                underfill += uncovered;
            else
                fragmentation += uncovered;
        }
        for (const auto& p : pred_runs) {
            int overlapping = 0;
            for (const auto& g : gt_runs)
                if (overlaps(p, g)) ++overlapping;
            long long outside = 0;
            for (std::size_t i = p.begin; i < p.end; ++i)
                if (gt.labels[i] != c) ++outside;
            if (overlapping == 0)
                insertion += static_cast<long long>(p.end - p.begin);
            else if (overlapping == 1)
                overfill += outside;
            else
                merge += outside;
        }
    }

    const double denom = static_cast<double>(n) / 100.0;
    WardRatios w;
    w.underfill = underfill / denom;
    w.overfill = overfill / denom;
    w.deletion = deletion / denom;
    w.insertion = insertion / denom;
    w.fragmentation = fragmentation / denom;
    w.merge = merge / denom;
    return w;
}

namespace {

double overlap_ratio(const Segment& a, const Segment& b) {
    const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
    if (inter <= 0.0) return 0.0;
    const double uni = (a.end - a.start) + (b.end - b.start) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

void check_gt_disjoint(const std::vector<Segment>& gt) {
    std::vector<Segment> sorted = gt;
    std::sort(sorted.begin(), sorted.end(),
              [](const Segment& a, const Segment& b) { return a.start < b.start; });
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i)
        if (sorted[i].end > sorted[i + 1].start)
            throw InputError("average_precision: overlapping ground-truth segments");
}

// Pooled AP over several sequences: entries carry a sequence key so that a
// prediction can only match ground truth of its own sequence.
double pooled_average_precision(const std::vector<std::pair<int, Segment>>& preds,
                                const std::map<int, std::vector<Segment>>& gts,
                                double thr) {
    std::size_t total_gt = 0;
    for (const auto& [key, segs] : gts) {
        check_gt_disjoint(segs);
        total_gt += segs.size();
    }
    if (total_gt == 0 || preds.empty()) return 0.0;

    std::vector<std::size_t> order(preds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const Segment& sa = preds[a].second;
        const Segment& sb = preds[b].second;
        if (sa.score != sb.score) return sa.score > sb.score;
        if (sa.start != sb.start) return sa.start < sb.start;
        return preds[a].first < preds[b].first;
    });

    std::map<int, std::vector<bool>> matched;
    for (const auto& [key, segs] : gts) matched[key].assign(segs.size(), false);

    std::vector<char> is_tp(preds.size(), 0);
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        const auto& [key, seg] = preds[order[rank]];
        const auto it = gts.find(key);
        if (it == gts.end()) continue;
        const auto& candidates = it->second;
        auto& used = matched[key];
        double best_iou = -1.0;
        std::size_t best = candidates.size();
        for (std::size_t g = 0; g < candidates.size(); ++g) {
            if (used[g] || candidates[g].label != seg.label) continue;
            const double ov = overlap_ratio(seg, candidates[g]);
            if (ov > best_iou) {
                best_iou = ov;
                best = g;
            }
        }
        if (best < candidates.size() && best_iou >= thr) {
            used[best] = true;
            is_tp[rank] = 1;
        }
    }

    // Precision envelope; recall rises by exactly 1/total_gt at each TP, so
    // AP is the mean of the enveloped precision over true positives.
    const std::size_t k = preds.size();
    std::vector<double> precision(k);
    long long tp = 0;
    for (std::size_t i = 0; i < k; ++i) {
        tp += is_tp[i];
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    }
    for (std::size_t i = k; i-- > 1;)
        precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap_sum = 0.0;
    for (std::size_t i = 0; i < k; ++i)
        if (is_tp[i]) ap_sum += precision[i];
    return ap_sum / static_cast<double>(total_gt);
}

}  // namespace

double average_precision(const std::vector<Segment>& preds,
                         const std::vector<Segment>& gt, double tiou_threshold) {
    std::vector<std::pair<int, Segment>> pooled;
    pooled.reserve(preds.size());
    for (const auto& p : preds) pooled.emplace_back(0, p);
    std::map<int, std::vector<Segment>> gts;
    gts[0] = gt;
    return pooled_average_precision(pooled, gts, tiou_threshold);
}

MapResult map_suite(const SegmentSet& preds, const SegmentSet& gts,
                    const std::vector<double>& thresholds) {
    // Stable integer key per sequence.
    std::map<std::string, int> keys;
    for (const auto& [name, segs] : gts) keys.emplace(name, static_cast<int>(keys.size()));

    std::set<int> classes;
    for (const auto& [name, segs] : gts)
        for (const auto& s : segs) classes.insert(s.label);

    MapResult res;
    if (classes.empty()) {
        for (double thr : thresholds) res.per_tiou.emplace_back(thr, 0.0);
        res.avg = 0.0;
        return res;
    }

    double total = 0.0;
    for (double thr : thresholds) {
        double sum_ap = 0.0;
        for (int c : classes) {
            std::vector<std::pair<int, Segment>> cls_preds;
            std::map<int, std::vector<Segment>> cls_gts;
            for (const auto& [name, key] : keys) {
                auto git = gts.find(name);
                std::vector<Segment> g;
                for (const auto& s : git->second)
                    if (s.label == c) g.push_back(s);
                cls_gts[key] = std::move(g);
                auto pit = preds.find(name);
                if (pit != preds.end())
                    for (const auto& s : pit->second)
                        if (s.label == c) cls_preds.emplace_back(key, s);
            }
            sum_ap += pooled_average_precision(cls_preds, cls_gts, thr);
        }
        const double map = 100.0 * sum_ap / static_cast<double>(classes.size());
        res.per_tiou.emplace_back(thr, map);
        total += map;
    }
    res.avg = total / static_cast<double>(thresholds.size());
    return res;
}

LengthBinCounts length_bins_seconds(const std::vector<double>& durations_seconds) {
    LengthBinCounts b;
    for (double d : durations_seconds) {
        if (d <= 0.0) continue;
        if (d <= 3.0)
            ++b.xs;
        else if (d <= 6.0)
            ++b.s;
        else if (d <= 12.0)
            ++b.m;
        else if (d <= 18.0)
            ++b.l;
        else
            ++b.xl;
    }
    return b;
}

LengthBinCounts length_bins(const std::vector<Segment>& segments, int stride_samples,
                            double sampling_rate) {
    if (stride_samples < 1 || sampling_rate <= 0.0)
        throw InputError("length_bins: invalid stride or sampling rate");
    std::vector<double> durations;
    durations.reserve(segments.size());
    for (const auto& s : segments)
        durations.push_back(s.length() * stride_samples / sampling_rate);
    return length_bins_seconds(durations);
}

std::map<std::string, double> EvalReport::scalars() const {
    std::map<std::string, double> s;
    s["precision"] = precision;
    s["recall"] = recall;
    s["f1"] = f1;
    s["null_accuracy"] = null_accuracy;
    s["avg_map"] = avg_map;
    for (const auto& [thr, v] : map_per_tiou) {
        std::ostringstream key;
        key << "map@" << thr;
        s[key.str()] = v;
    }
    s["ward.UR"] = ward.underfill;
    s["ward.OR"] = ward.overfill;
    s["ward.DR"] = ward.deletion;
    s["ward.IR"] = ward.insertion;
    s["ward.FR"] = ward.fragmentation;
    s["ward.MR"] = ward.merge;
    return s;
}

namespace {

nlohmann::json number_or_null(double v) {
    if (std::isnan(v)) return nullptr;
    return v;
}

}  // namespace

std::string EvalReport::to_json_string(int indent) const {
    nlohmann::json j;
    j["subject"] = subject;
    j["seed"] = seed;
    j["protocol"] = protocol;
    j["precision"] = number_or_null(precision);
    j["recall"] = number_or_null(recall);
    j["f1"] = number_or_null(f1);
    j["null_accuracy"] = number_or_null(null_accuracy);
    nlohmann::json acc = nlohmann::json::array();
    for (double v : per_class_accuracy) acc.push_back(number_or_null(v));
    j["per_class_accuracy"] = acc;
    j["confusion"] = confusion;
    j["ward"] = {{"UR", ward.underfill}, {"OR", ward.overfill},
                 {"DR", ward.deletion},  {"IR", ward.insertion},
                 {"FR", ward.fragmentation}, {"MR", ward.merge}};
    nlohmann::json maps = nlohmann::json::object();
    for (const auto& [thr, v] : map_per_tiou) {
        std::ostringstream key;
        key << thr;
        maps[key.str()] = v;
    }
    j["map_per_tiou"] = maps;
    j["avg_map"] = avg_map;
    j["length_bin_counts"] = {{"XS", length_bin_counts.xs}, {"S", length_bin_counts.s},
                              {"M", length_bin_counts.m},   {"L", length_bin_counts.l},
                              {"XL", length_bin_counts.xl}};
    j["postprocess"] = {{"threshold", threshold},
                        {"majority_width_seconds", majority_width_seconds},
                        {"validation_optimized", validation_optimized}};
    return j.dump(indent);
}

std::string EvalReport::confusion_csv() const {
    std::ostringstream out;
    for (const auto& row : confusion) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            out << row[i];
        }
        out << '\n';
    }
    return out.str();
}

EvalReport build_report(const SampleTimeline& pred_timeline,
                        const std::vector<Segment>& pred_segments,
                        const GroundTruth& gt, int num_classes,
                        std::optional<int> null_class, int stride_samples,
                        double sampling_rate, const std::vector<double>& thresholds,
                        Averaging averaging) {
    EvalReport r;
    r.subject = gt.subject_id;
    const auto sm =
        sample_metrics(pred_timeline, gt.timeline, num_classes, null_class, averaging);
    r.precision = sm.precision;
    r.recall = sm.recall;
    r.f1 = sm.f1;
    r.per_class_accuracy = sm.per_class_accuracy;
    r.null_accuracy = sm.null_accuracy;
    r.confusion = sm.confusion;
    r.ward = ward_errors(pred_timeline, gt.timeline, num_classes, null_class);
    SegmentSet p, g;
    p[gt.subject_id] = pred_segments;
    g[gt.subject_id] = gt.segments;
    const auto mr = map_suite(p, g, thresholds);
    r.map_per_tiou = mr.per_tiou;
    r.avg_map = mr.avg;
    r.length_bin_counts = length_bins(pred_segments, stride_samples, sampling_rate);
    return r;
}

}  // namespace tal
