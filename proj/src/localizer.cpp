#include "tal/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

namespace tal {

namespace {

constexpr double kProbClamp = 1e-7;
constexpr double kInf = std::numeric_limits<double>::infinity();

double sigmoid(double x) {
    if (x >= 0.0) {
        const double z = std::exp(-x);
        return 1.0 / (1.0 + z);
    }
    const double z = std::exp(x);
    return z / (1.0 + z);
}

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Uniform in [lo, hi) from the raw engine; the standard distributions are not
// bit-stable across implementations.
double uniform(std::mt19937_64& rng, double lo, double hi) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

// out[t,o] = b[o] + sum_{k,i} W[o,i,k] * in[t+k-1,i], zero padded.
void conv3_forward(const double* in, std::size_t t_len, std::size_t cin,
                   const double* w, const double* b, std::size_t cout, double* out) {
    for (std::size_t t = 0; t < t_len; ++t) {
        double* orow = out + t * cout;
        for (std::size_t o = 0; o < cout; ++o) orow[o] = b[o];
        for (int k = 0; k < 3; ++k) {
            const long long src = static_cast<long long>(t) + k - 1;
            if (src < 0 || src >= static_cast<long long>(t_len)) continue;
            const double* irow = in + static_cast<std::size_t>(src) * cin;
            for (std::size_t o = 0; o < cout; ++o) {
                const double* wbase = w + o * cin * 3 + k;
                double acc = 0.0;
                for (std::size_t i = 0; i < cin; ++i) acc += wbase[i * 3] * irow[i];
                orow[o] += acc;
            }
        }
    }
}

void conv3_backward(const double* in, const double* dout, std::size_t t_len,
                    std::size_t cin, std::size_t cout, const double* w, double* din,
                    double* dw, double* db) {
    for (std::size_t t = 0; t < t_len; ++t) {
        const double* drow = dout + t * cout;
        for (std::size_t o = 0; o < cout; ++o) db[o] += drow[o];
        for (int k = 0; k < 3; ++k) {
            const long long src = static_cast<long long>(t) + k - 1;
            if (src < 0 || src >= static_cast<long long>(t_len)) continue;
            const double* irow = in + static_cast<std::size_t>(src) * cin;
            double* dirow = din + static_cast<std::size_t>(src) * cin;
            for (std::size_t o = 0; o < cout; ++o) {
                const double go = drow[o];
                if (go == 0.0) continue;
                const double* wbase = w + o * cin * 3 + k;
                double* dwbase = dw + o * cin * 3 + k;
                for (std::size_t i = 0; i < cin; ++i) {
                    dwbase[i * 3] += go * irow[i];
                    dirow[i] += go * wbase[i * 3];
                }
            }
        }
    }
}

void affine_forward(const double* in, std::size_t t_len, std::size_t cin,
                    const double* w, const double* b, std::size_t cout, double* out) {
    for (std::size_t t = 0; t < t_len; ++t) {
        const double* irow = in + t * cin;
        double* orow = out + t * cout;
        for (std::size_t o = 0; o < cout; ++o) {
            const double* wrow = w + o * cin;
            double acc = b[o];
            for (std::size_t i = 0; i < cin; ++i) acc += wrow[i] * irow[i];
            orow[o] = acc;
        }
    }
}

void affine_backward(const double* in, const double* dout, std::size_t t_len,
                     std::size_t cin, std::size_t cout, const double* w, double* din,
                     double* dw, double* db) {
    for (std::size_t t = 0; t < t_len; ++t) {
        const double* irow = in + t * cin;
        const double* drow = dout + t * cout;
        double* dirow = din + t * cin;
        for (std::size_t o = 0; o < cout; ++o) {
            const double go = drow[o];
            if (go == 0.0) continue;
            db[o] += go;
            const double* wrow = w + o * cin;
            double* dwrow = dw + o * cin;
            for (std::size_t i = 0; i < cin; ++i) {
                dwrow[i] += go * irow[i];
                dirow[i] += go * wrow[i];
            }
        }
    }
}

struct FocalTerm {
    double loss = 0.0;
    double dlogit = 0.0;
};

FocalTerm focal_term(double logit, bool positive, double gamma, double alpha) {
    const double p_raw = sigmoid(logit);
    const double p = std::clamp(p_raw, kProbClamp, 1.0 - kProbClamp);
    double loss, dp;
    if (positive) {
        const double q = 1.0 - p;
        const double qg = std::pow(q, gamma);
        loss = -alpha * qg * std::log(p);
        dp = -alpha * qg / p;
        if (gamma != 0.0) dp += alpha * gamma * std::pow(q, gamma - 1.0) * std::log(p);
    } else {
        const double pg = std::pow(p, gamma);
        loss = -(1.0 - alpha) * pg * std::log(1.0 - p);
        dp = (1.0 - alpha) * pg / (1.0 - p);
        if (gamma != 0.0)
            dp += -(1.0 - alpha) * gamma * std::pow(p, gamma - 1.0) * std::log(1.0 - p);
    }
    const bool inside = p_raw > kProbClamp && p_raw < 1.0 - kProbClamp;
    return {loss, inside ? dp * p_raw * (1.0 - p_raw) : 0.0};
}

struct GiouTerm {
    double loss = 0.0;
    double d_start = 0.0;
    double d_end = 0.0;
};

GiouTerm giou_term(double pds, double pde, double tds, double tde) {
    if (tds + tde <= 0.0) return {};  // degenerate target costs nothing
    const double inter = std::min(pds, tds) + std::min(pde, tde);
    const double uni = pds + pde + tds + tde - inter;
    const double hull = std::max(pds, tds) + std::max(pde, tde);
    GiouTerm g;
    g.loss = 1.0 - inter / uni + (hull - uni) / hull;
    const double di_s = pds < tds ? 1.0 : 0.0;
    const double di_e = pde < tde ? 1.0 : 0.0;
    const double du_s = 1.0 - di_s;
    const double du_e = 1.0 - di_e;
    const double dh_s = pds > tds ? 1.0 : 0.0;
    const double dh_e = pde > tde ? 1.0 : 0.0;
    const double u2 = uni * uni;
    const double h2 = hull * hull;
    g.d_start = -(di_s * uni - inter * du_s) / u2 + (-du_s * hull + uni * dh_s) / h2;
    g.d_end = -(di_e * uni - inter * du_e) / u2 + (-du_e * hull + uni * dh_e) / h2;
    return g;
}

}  // namespace

double focal_loss(const std::vector<double>& class_probs, int target_class,
                  double gamma, double alpha) {
    double total = 0.0;
    for (std::size_t c = 0; c < class_probs.size(); ++c) {
        const double p = std::clamp(class_probs[c], kProbClamp, 1.0 - kProbClamp);
        if (static_cast<int>(c) == target_class)
            total += -alpha * std::pow(1.0 - p, gamma) * std::log(p);
        else
            total += -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
    }
    return total;
}

double giou_loss_1d(double pred_d_start, double pred_d_end, double target_d_start,
                    double target_d_end) {
    if (pred_d_start < 0.0 || pred_d_end < 0.0 || target_d_start < 0.0 ||
        target_d_end < 0.0)
        throw InputError("giou_loss_1d: distances must be >= 0");
    if (pred_d_start + pred_d_end <= 0.0 && target_d_start + target_d_end <= 0.0)
        return 0.0;
    return giou_term(pred_d_start, pred_d_end, target_d_start, target_d_end).loss;
}

std::vector<PointTarget> assign_targets(
    const std::vector<PyramidPoint>& points, const std::vector<Segment>& gt,
    const std::vector<std::pair<double, double>>& level_ranges) {
    for (const auto& s : gt)
        if (!(s.start < s.end))
            throw InputError("assign_targets: degenerate ground-truth segment");
    std::vector<PointTarget> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& pt = points[i];
        if (pt.level < 0 || pt.level >= static_cast<int>(level_ranges.size()))
            throw InputError("assign_targets: point level outside range table");
        const auto [lo, hi] = level_ranges[pt.level];
        const double t = pt.timestamp;
        double best_len = kInf;
        int best = -1;
        for (std::size_t j = 0; j < gt.size(); ++j) {
            const auto& s = gt[j];
            if (t < s.start || t >= s.end) continue;
            const double far = std::max(t - s.start, s.end - t);
            if (far < lo || far >= hi) continue;
            if (s.length() < best_len) {
                best_len = s.length();
                best = static_cast<int>(j);
            }
        }
        if (best >= 0) {
            out[i].class_id = gt[best].label;
            out[i].d_start = t - gt[best].start;
            out[i].d_end = gt[best].end - t;
        }
    }
    return out;
}

std::vector<std::pair<double, double>> LocalizerConfig::effective_ranges() const {
    if (!regression_ranges.empty()) return regression_ranges;
    std::vector<std::pair<double, double>> r;
    double lo = 0.0;
    for (int l = 0; l < pyramid_levels; ++l) {
        const double hi = (l == pyramid_levels - 1) ? kInf : 4.0 * (1 << l);
        r.emplace_back(lo, hi);
        lo = hi;
    }
    return r;
}

void LocalizerConfig::validate() const {
    if (hidden_dim < 1) throw InputError("localizer: hidden_dim must be >= 1");
    if (pyramid_levels < 1) throw InputError("localizer: pyramid_levels must be >= 1");
    if (head_layers < 0) throw InputError("localizer: head_layers must be >= 0");
    if (learning_rate <= 0.0) throw InputError("localizer: learning_rate must be > 0");
    if (epochs < 0) throw InputError("localizer: epochs must be >= 0");
    if (focal_alpha < 0.0 || focal_alpha > 1.0)
        throw InputError("localizer: focal_alpha must lie in [0, 1]");
    if (focal_gamma < 0.0) throw InputError("localizer: focal_gamma must be >= 0");
    if (reg_loss_weight < 0.0) throw InputError("localizer: reg_loss_weight must be >= 0");
    if (!regression_ranges.empty()) {
        if (static_cast<int>(regression_ranges.size()) != pyramid_levels)
            throw InputError("localizer: one regression range per pyramid level required");
        double prev = 0.0;
        for (const auto& [lo, hi] : regression_ranges) {
            if (lo != prev || hi <= lo)
                throw InputError("localizer: regression ranges must be contiguous and increasing");
            prev = hi;
        }
    }
}

struct LocalizerModel::Activations {
    std::size_t t_len = 0;
    std::vector<std::size_t> level_sizes;
    std::vector<double> proj_pre;             // T*H
    std::vector<std::vector<double>> feats;   // per level, T_l*H
    std::vector<std::vector<int>> pool_src;   // per level >= 1, source row in l-1
    struct HeadActs {
        std::vector<std::vector<double>> pre;  // per conv layer
        std::vector<std::vector<double>> act;
        std::vector<double> out;
    };
    std::vector<HeadActs> cls, reg;  // per level
};

LocalizerModel::LocalizerModel(int input_dim, int num_fg_classes, LocalizerConfig cfg)
    : input_dim_(input_dim), num_fg_classes_(num_fg_classes), cfg_(std::move(cfg)) {
    if (input_dim_ < 1) throw InputError("localizer: input dimension must be >= 1");
    if (num_fg_classes_ < 1) throw InputError("localizer: need at least one foreground class");
    cfg_.validate();
    ranges_ = cfg_.effective_ranges();

    std::mt19937_64 rng(cfg_.seed);
    const std::size_t h = static_cast<std::size_t>(cfg_.hidden_dim);
    const std::size_t d = static_cast<std::size_t>(input_dim_);
    const std::size_t c = static_cast<std::size_t>(num_fg_classes_);

    auto add_block = [&](const std::string& name, std::vector<std::size_t> shape,
                         std::size_t fan_in) {
        ParamBlock b;
        b.name = name;
        b.shape = std::move(shape);
        std::size_t n = 1;
        for (auto s : b.shape) n *= s;
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        b.value.resize(n);
        for (auto& v : b.value) v = uniform(rng, -bound, bound);
        b.grad.assign(n, 0.0);
        b.velocity.assign(n, 0.0);
        blocks_.push_back(std::move(b));
        return static_cast<int>(blocks_.size() - 1);
    };

    proj_w_ = add_block("proj.w", {h, d}, d);
    proj_b_ = add_block("proj.b", {h}, d);
    for (int k = 0; k < cfg_.head_layers; ++k) {
        cls_conv_w_.push_back(add_block("cls.conv" + std::to_string(k) + ".w", {h, h, 3}, h * 3));
        cls_conv_b_.push_back(add_block("cls.conv" + std::to_string(k) + ".b", {h}, h * 3));
    }
    cls_out_w_ = add_block("cls.out.w", {c, h}, h);
    cls_out_b_ = add_block("cls.out.b", {c}, h);
    for (int k = 0; k < cfg_.head_layers; ++k) {
        reg_conv_w_.push_back(add_block("reg.conv" + std::to_string(k) + ".w", {h, h, 3}, h * 3));
        reg_conv_b_.push_back(add_block("reg.conv" + std::to_string(k) + ".b", {h}, h * 3));
    }
    reg_out_w_ = add_block("reg.out.w", {2, h}, h);
    reg_out_b_ = add_block("reg.out.b", {2}, h);
}

std::vector<PyramidPoint> LocalizerModel::pyramid_points(std::size_t num_windows) const {
    std::vector<PyramidPoint> pts;
    for (int l = 0; l < cfg_.pyramid_levels; ++l) {
        const std::size_t stride = static_cast<std::size_t>(1) << l;
        const std::size_t t_l = ceil_div(num_windows, stride);
        for (std::size_t i = 0; i < t_l; ++i) {
            PyramidPoint p;
            p.level = l;
            p.index_in_level = static_cast<int>(i);
            p.stride = static_cast<int>(stride);
            const double lo = static_cast<double>(i * stride);
            const double hi =
                static_cast<double>(std::min((i + 1) * stride, num_windows));
            p.timestamp = (lo + hi - 1.0) / 2.0;  // center of the covered windows
            pts.push_back(p);
        }
    }
    return pts;
}

void LocalizerModel::run_forward(const Matrix& features, Activations& acts) const {
    const std::size_t t_len = features.rows;
    const std::size_t h = static_cast<std::size_t>(cfg_.hidden_dim);
    const std::size_t c = static_cast<std::size_t>(num_fg_classes_);
    const std::size_t levels = static_cast<std::size_t>(cfg_.pyramid_levels);

    acts.t_len = t_len;
    acts.level_sizes.resize(levels);
    acts.feats.assign(levels, {});
    acts.pool_src.assign(levels, {});
    acts.cls.assign(levels, {});
    acts.reg.assign(levels, {});

    // Projection with ReLU.
    acts.proj_pre.resize(t_len * h);
    affine_forward(features.data.data(), t_len, features.cols,
                   blocks_[proj_w_].value.data(), blocks_[proj_b_].value.data(), h,
                   acts.proj_pre.data());
    acts.feats[0].resize(t_len * h);
    for (std::size_t i = 0; i < acts.proj_pre.size(); ++i)
        acts.feats[0][i] = acts.proj_pre[i] > 0.0 ? acts.proj_pre[i] : 0.0;
    acts.level_sizes[0] = t_len;

    // Stride-2 max-pooling pyramid (kernel 2, first index wins ties).
    for (std::size_t l = 1; l < levels; ++l) {
        const std::size_t prev = acts.level_sizes[l - 1];
        const std::size_t cur = ceil_div(prev, 2);
        acts.level_sizes[l] = cur;
        acts.feats[l].resize(cur * h);
        acts.pool_src[l].resize(cur * h);
        for (std::size_t i = 0; i < cur; ++i) {
            const std::size_t a = 2 * i;
            const std::size_t b = 2 * i + 1;
            for (std::size_t ch = 0; ch < h; ++ch) {
                double v = acts.feats[l - 1][a * h + ch];
                int src = static_cast<int>(a);
                if (b < prev) {
                    const double vb = acts.feats[l - 1][b * h + ch];
                    if (vb > v) {
                        v = vb;
                        src = static_cast<int>(b);
                    }
                }
                acts.feats[l][i * h + ch] = v;
                acts.pool_src[l][i * h + ch] = src;
            }
        }
    }

    // Shared heads at every level.
    auto run_head = [&](const std::vector<int>& conv_w, const std::vector<int>& conv_b,
                        int out_w, int out_b, std::size_t cout, std::size_t l,
                        Activations::HeadActs& head) {
        const std::size_t t_l = acts.level_sizes[l];
        const double* in = acts.feats[l].data();
        head.pre.assign(conv_w.size(), {});
        head.act.assign(conv_w.size(), {});
        for (std::size_t k = 0; k < conv_w.size(); ++k) {
            head.pre[k].resize(t_l * h);
            conv3_forward(in, t_l, h, blocks_[conv_w[k]].value.data(),
                          blocks_[conv_b[k]].value.data(), h, head.pre[k].data());
            head.act[k].resize(t_l * h);
            for (std::size_t i = 0; i < head.pre[k].size(); ++i)
                head.act[k][i] = head.pre[k][i] > 0.0 ? head.pre[k][i] : 0.0;
            in = head.act[k].data();
        }
        head.out.resize(t_l * cout);
        affine_forward(in, t_l, h, blocks_[out_w].value.data(),
                       blocks_[out_b].value.data(), cout, head.out.data());
    };

    for (std::size_t l = 0; l < levels; ++l) {
        run_head(cls_conv_w_, cls_conv_b_, cls_out_w_, cls_out_b_, c, l, acts.cls[l]);
        run_head(reg_conv_w_, reg_conv_b_, reg_out_w_, reg_out_b_, 2, l, acts.reg[l]);
    }
}

ForwardOutput LocalizerModel::forward(const WindowSequence& ws) const {
    if (static_cast<int>(ws.dim()) != input_dim_)
        throw InputError("localizer: feature dimension " + std::to_string(ws.dim()) +
                         " does not match model input " + std::to_string(input_dim_));
    Activations acts;
    run_forward(ws.features, acts);

    ForwardOutput fo;
    fo.points = pyramid_points(ws.size());
    fo.labels.reserve(fo.points.size());
    const std::size_t c = static_cast<std::size_t>(num_fg_classes_);
    for (const auto& pt : fo.points) {
        const std::size_t l = static_cast<std::size_t>(pt.level);
        const std::size_t i = static_cast<std::size_t>(pt.index_in_level);
        SeqLabel lab;
        lab.timestamp = pt.timestamp;
        lab.level_stride = pt.stride;
        lab.class_probs.resize(c);
        for (std::size_t j = 0; j < c; ++j)
            lab.class_probs[j] = sigmoid(acts.cls[l].out[i * c + j]);
        lab.d_start = softplus(acts.reg[l].out[i * 2]) * pt.stride;
        lab.d_end = softplus(acts.reg[l].out[i * 2 + 1]) * pt.stride;
        fo.labels.push_back(std::move(lab));
    }
    return fo;
}

double LocalizerModel::sequence_loss(const TrainSample& sample, bool with_grad) {
    const WindowSequence& ws = *sample.windows;
    if (static_cast<int>(ws.dim()) != input_dim_)
        throw InputError("localizer: training feature dimension mismatch");
    for (const auto& s : sample.gt_segments)
        if (s.label < 0 || s.label >= num_fg_classes_)
            throw InputError("localizer: ground-truth label outside foreground classes");

    Activations acts;
    run_forward(ws.features, acts);

    const auto points = pyramid_points(ws.size());
    const auto targets = assign_targets(points, sample.gt_segments, ranges_);

    std::size_t n_pos = 0;
    for (const auto& t : targets)
        if (t.class_id != PointTarget::kBackground) ++n_pos;
    const double div = static_cast<double>(std::max<std::size_t>(1, n_pos));

    const std::size_t h = static_cast<std::size_t>(cfg_.hidden_dim);
    const std::size_t c = static_cast<std::size_t>(num_fg_classes_);
    const std::size_t levels = static_cast<std::size_t>(cfg_.pyramid_levels);
    const double lambda = cfg_.reg_loss_weight;

    std::vector<std::vector<double>> dlogits(levels), dregout(levels);
    if (with_grad)
        for (std::size_t l = 0; l < levels; ++l) {
            dlogits[l].assign(acts.level_sizes[l] * c, 0.0);
            dregout[l].assign(acts.level_sizes[l] * 2, 0.0);
        }

    double loss = 0.0;
    std::size_t point_idx = 0;
    for (std::size_t l = 0; l < levels; ++l) {
        const std::size_t t_l = acts.level_sizes[l];
        const double stride = static_cast<double>(1ull << l);
        for (std::size_t i = 0; i < t_l; ++i, ++point_idx) {
            const auto& tgt = targets[point_idx];
            for (std::size_t j = 0; j < c; ++j) {
                const bool positive = tgt.class_id == static_cast<int>(j);
                const auto term = focal_term(acts.cls[l].out[i * c + j], positive,
                                             cfg_.focal_gamma, cfg_.focal_alpha);
                loss += term.loss / div;
                if (with_grad) dlogits[l][i * c + j] = term.dlogit / div;
            }
            if (tgt.class_id != PointTarget::kBackground && lambda > 0.0) {
                const double r0 = acts.reg[l].out[i * 2];
                const double r1 = acts.reg[l].out[i * 2 + 1];
                const double d0 = softplus(r0) * stride;
                const double d1 = softplus(r1) * stride;
                const auto g = giou_term(d0, d1, tgt.d_start, tgt.d_end);
                loss += lambda * g.loss / div;
                if (with_grad) {
                    dregout[l][i * 2] = lambda / div * g.d_start * sigmoid(r0) * stride;
                    dregout[l][i * 2 + 1] = lambda / div * g.d_end * sigmoid(r1) * stride;
                }
            }
        }
    }

    if (!with_grad) return loss;

    // Backward: heads per level, then pyramid, then projection.
    std::vector<std::vector<double>> dfeats(levels);
    for (std::size_t l = 0; l < levels; ++l) dfeats[l].assign(acts.level_sizes[l] * h, 0.0);

    auto head_backward = [&](const std::vector<int>& conv_w, const std::vector<int>& conv_b,
                             int out_w, int out_b, std::size_t cout, std::size_t l,
                             const Activations::HeadActs& head,
                             const std::vector<double>& dout) {
        const std::size_t t_l = acts.level_sizes[l];
        const double* last_in =
            head.act.empty() ? acts.feats[l].data() : head.act.back().data();
        std::vector<double> dact(t_l * h, 0.0);
        affine_backward(last_in, dout.data(), t_l, h, cout, blocks_[out_w].value.data(),
                        dact.data(), blocks_[out_w].grad.data(),
                        blocks_[out_b].grad.data());
        for (std::size_t k = head.pre.size(); k-- > 0;) {
            for (std::size_t i = 0; i < dact.size(); ++i)
                if (head.pre[k][i] <= 0.0) dact[i] = 0.0;
            const double* in = k == 0 ? acts.feats[l].data() : head.act[k - 1].data();
            double* din = k == 0 ? dfeats[l].data() : nullptr;
            std::vector<double> dprev;
            if (!din) {
                dprev.assign(t_l * h, 0.0);
                din = dprev.data();
            }
            conv3_backward(in, dact.data(), t_l, h, h, blocks_[conv_w[k]].value.data(),
                           din, blocks_[conv_w[k]].grad.data(),
                           blocks_[conv_b[k]].grad.data());
            if (!dprev.empty()) dact = std::move(dprev);
        }
        if (head.pre.empty())
            for (std::size_t i = 0; i < dact.size(); ++i) dfeats[l][i] += dact[i];
    };

    for (std::size_t l = 0; l < levels; ++l) {
        head_backward(cls_conv_w_, cls_conv_b_, cls_out_w_, cls_out_b_, c, l, acts.cls[l],
                      dlogits[l]);
        head_backward(reg_conv_w_, reg_conv_b_, reg_out_w_, reg_out_b_, 2, l, acts.reg[l],
                      dregout[l]);
    }

    for (std::size_t l = levels; l-- > 1;) {
        const std::size_t cur = acts.level_sizes[l];
        for (std::size_t i = 0; i < cur * h; ++i) {
            const double g = dfeats[l][i];
            if (g == 0.0) continue;
            const std::size_t ch = i % h;
            dfeats[l - 1][static_cast<std::size_t>(acts.pool_src[l][i]) * h + ch] += g;
        }
    }

    std::vector<double> dz(acts.t_len * h);
    for (std::size_t i = 0; i < dz.size(); ++i)
        dz[i] = acts.proj_pre[i] > 0.0 ? dfeats[0][i] : 0.0;
    {
        auto& pw = blocks_[proj_w_];
        auto& pb = blocks_[proj_b_];
        const std::size_t d = static_cast<std::size_t>(input_dim_);
        for (std::size_t t = 0; t < acts.t_len; ++t) {
            const double* xrow = ws.features.row(t);
            const double* dzrow = dz.data() + t * h;
            for (std::size_t ch = 0; ch < h; ++ch) {
                const double g = dzrow[ch];
                if (g == 0.0) continue;
                pb.grad[ch] += g;
                double* dwrow = pw.grad.data() + ch * d;
                for (std::size_t j = 0; j < d; ++j) dwrow[j] += g * xrow[j];
            }
        }
    }
    return loss;
}

void LocalizerModel::zero_grad() {
    for (auto& b : blocks_) std::fill(b.grad.begin(), b.grad.end(), 0.0);
}

void LocalizerModel::sgd_step(double lr_scale) {
    const double lr = cfg_.learning_rate * lr_scale;
    for (auto& b : blocks_)
        for (std::size_t i = 0; i < b.value.size(); ++i) {
            const double g = b.grad[i] + cfg_.weight_decay * b.value[i];
            b.velocity[i] = cfg_.momentum * b.velocity[i] - lr * g;
            b.value[i] += b.velocity[i];
        }
}

TrainResult train(LocalizerModel& model, const std::vector<TrainSample>& samples) {
    if (samples.empty()) throw InputError("train: no training sequences");
    TrainResult result;
    const auto& cfg = model.config();
    double lr_scale = 1.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (epoch > 0 && cfg.lr_decay_interval > 0 && epoch % cfg.lr_decay_interval == 0)
            lr_scale *= cfg.lr_decay_factor;
        double total = 0.0;
        for (std::size_t s = 0; s < samples.size(); ++s) {
            model.zero_grad();
            const double loss = model.sequence_loss(samples[s], true);
            if (!std::isfinite(loss))
                throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) +
                                       ", sequence " + std::to_string(s));
            model.sgd_step(lr_scale);
            total += loss;
        }
        result.epoch_mean_loss.push_back(total / static_cast<double>(samples.size()));
    }
    return result;
}

std::vector<Segment> decode(const ForwardOutput& output, double t_max, double epsilon) {
    std::vector<Segment> out;
    for (std::size_t i = 0; i < output.labels.size(); ++i) {
        const auto& lab = output.labels[i];
        if (lab.d_start + lab.d_end <= 0.0) continue;
        for (std::size_t c = 0; c < lab.class_probs.size(); ++c) {
            const double p = lab.class_probs[c];
            if (p < epsilon) continue;
            Segment s;
            s.start = std::max(0.0, lab.timestamp - lab.d_start);
            s.end = std::min(t_max, lab.timestamp + lab.d_end);
            if (!(s.start < s.end)) continue;
            s.label = static_cast<int>(c);
            s.score = p;
            out.push_back(s);
        }
    }
    return out;
}

GradCheckReport check_gradients(LocalizerModel& model, const TrainSample& sample,
                                double step) {
    model.zero_grad();
    model.sequence_loss(sample, true);
    std::vector<std::vector<double>> analytic;
    for (const auto& b : model.param_blocks()) analytic.push_back(b.grad);

    GradCheckReport rep;
    auto& blocks = model.param_blocks();
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        double worst = 0.0;
        for (std::size_t i = 0; i < blocks[bi].value.size(); ++i) {
            const double orig = blocks[bi].value[i];
            blocks[bi].value[i] = orig + step;
            const double lp = model.sequence_loss(sample, false);
            blocks[bi].value[i] = orig - step;
            const double lm = model.sequence_loss(sample, false);
            blocks[bi].value[i] = orig;
            const double fd = (lp - lm) / (2.0 * step);
            const double a = analytic[bi][i];
            const double err =
                std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 0.01});
            worst = std::max(worst, err);
        }
        rep.blocks.push_back({blocks[bi].name, worst});
        rep.max_rel_error = std::max(rep.max_rel_error, worst);
    }
    return rep;
}

namespace {

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw InputError("checkpoint: truncated file");
    return v;
}

void put_string(std::ofstream& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& in) {
    const auto n = get<std::uint32_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw InputError("checkpoint: truncated string");
    return s;
}

void put_doubles(std::ofstream& out, const std::vector<double>& v) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v.size()));
    for (double x : v) put(out, x);
}

std::vector<double> get_doubles(std::ifstream& in) {
    const auto n = get<std::uint32_t>(in);
    std::vector<double> v(n);
    for (auto& x : v) x = get<double>(in);
    return v;
}

constexpr char kMagic[4] = {'T', 'A', 'L', 'M'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void LocalizerModel::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write checkpoint '" + path + "'");
    out.write(kMagic, 4);
    put(out, kVersion);
    put<std::int32_t>(out, input_dim_);
    put<std::int32_t>(out, num_fg_classes_);
    put<std::int32_t>(out, cfg_.hidden_dim);
    put<std::int32_t>(out, cfg_.pyramid_levels);
    put<std::int32_t>(out, cfg_.head_layers);
    put(out, cfg_.focal_gamma);
    put(out, cfg_.focal_alpha);
    put(out, cfg_.reg_loss_weight);
    put(out, cfg_.learning_rate);
    put(out, cfg_.momentum);
    put(out, cfg_.weight_decay);
    put(out, cfg_.lr_decay_factor);
    put<std::int32_t>(out, cfg_.lr_decay_interval);
    put<std::int32_t>(out, cfg_.epochs);
    put(out, cfg_.seed);
    put(out, cfg_.decode_epsilon);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ranges_.size()));
    for (const auto& [lo, hi] : ranges_) {
        put(out, lo);
        put(out, hi);
    }
    put(out, window_config.window_seconds);
    put(out, window_config.overlap_fraction);
    put<std::uint8_t>(out, window_config.normalize ? 1 : 0);
    put<std::uint8_t>(out, window_config.axis_major ? 1 : 0);
    put_doubles(out, norm_stats.mean);
    put_doubles(out, norm_stats.stddev);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(blocks_.size()));
    for (const auto& b : blocks_) {
        put_string(out, b.name);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(b.value.size()));
        for (double v : b.value) put<float>(out, static_cast<float>(v));
    }
}

LocalizerModel LocalizerModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw InputError("checkpoint '" + path + "': bad magic bytes");
    if (get<std::uint32_t>(in) != kVersion)
        throw InputError("checkpoint '" + path + "': unsupported version");

    const int input_dim = get<std::int32_t>(in);
    const int num_fg = get<std::int32_t>(in);
    LocalizerConfig cfg;
    cfg.hidden_dim = get<std::int32_t>(in);
    cfg.pyramid_levels = get<std::int32_t>(in);
    cfg.head_layers = get<std::int32_t>(in);
    cfg.focal_gamma = get<double>(in);
    cfg.focal_alpha = get<double>(in);
    cfg.reg_loss_weight = get<double>(in);
    cfg.learning_rate = get<double>(in);
    cfg.momentum = get<double>(in);
    cfg.weight_decay = get<double>(in);
    cfg.lr_decay_factor = get<double>(in);
    cfg.lr_decay_interval = get<std::int32_t>(in);
    cfg.epochs = get<std::int32_t>(in);
    cfg.seed = get<std::uint64_t>(in);
    cfg.decode_epsilon = get<double>(in);
    const auto n_ranges = get<std::uint32_t>(in);
    cfg.regression_ranges.clear();
    for (std::uint32_t i = 0; i < n_ranges; ++i) {
        const double lo = get<double>(in);
        const double hi = get<double>(in);
        cfg.regression_ranges.emplace_back(lo, hi);
    }

    WindowConfig wcfg;
    wcfg.window_seconds = get<double>(in);
    wcfg.overlap_fraction = get<double>(in);
    wcfg.normalize = get<std::uint8_t>(in) != 0;
    wcfg.axis_major = get<std::uint8_t>(in) != 0;
    NormStats stats;
    stats.mean = get_doubles(in);
    stats.stddev = get_doubles(in);

    LocalizerModel model(input_dim, num_fg, cfg);
    model.window_config = wcfg;
    model.norm_stats = std::move(stats);

    const auto n_blocks = get<std::uint32_t>(in);
    if (n_blocks != model.blocks_.size())
        throw InputError("checkpoint '" + path + "': parameter block count mismatch");
    for (auto& b : model.blocks_) {
        const auto name = get_string(in);
        if (name != b.name)
            throw InputError("checkpoint '" + path + "': unexpected block '" + name + "'");
        const auto n = get<std::uint32_t>(in);
        if (n != b.value.size())
            throw InputError("checkpoint '" + path + "': block size mismatch for '" +
                             name + "'");
        for (auto& v : b.value) v = static_cast<double>(get<float>(in));
    }
    return model;
}

}  // namespace tal
