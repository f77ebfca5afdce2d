#include "confshare/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace confshare {

namespace {

template <class S>
struct Mat {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<S> v;

    Mat(int64_t r, int64_t c) : rows(r), cols(c), v(static_cast<size_t>(r * c), S(0)) {}
    S& operator()(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
    S operator()(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }
};

template <class S>
Mat<S> from_tensor(const Tensor& t) {
    Mat<S> m(t.rows(), t.numel() / t.rows());
    for (int64_t i = 0; i < t.numel(); ++i) m.v[static_cast<size_t>(i)] = static_cast<S>(t[i]);
    return m;
}

template <class S>
S sigmoid(S x) {
    if (x >= 0) return S(1) / (S(1) + std::exp(-x));
    const S e = std::exp(x);
    return e / (S(1) + e);
}

template <class S>
class Weights {
public:
    Weights(const ParameterStore& store, const std::map<std::string, ParamKey>& slots) : store_(store), slots_(slots) {}

    bool has(const std::string& path) const { return slots_.count(path) != 0; }

    const Tensor& get(const std::string& path) const {
        auto it = slots_.find(path);
        if (it == slots_.end()) throw std::logic_error("schedule has no binding for slot " + path);
        return store_.at(it->second);
    }

    Mat<S> matmul(const Mat<S>& x, const std::string& path) const { return product(x, from_tensor<S>(get(path))); }

    Mat<S> affine(const Mat<S>& x, const std::string& w, const std::string& b) const {
        Mat<S> y = has(w + "_u") ? product_nt(product(x, from_tensor<S>(get(w + "_u"))), from_tensor<S>(get(w + "_v")))
                                 : matmul(x, w);
        const Tensor& bias = get(b);
        for (int64_t r = 0; r < y.rows; ++r)
            for (int64_t c = 0; c < y.cols; ++c) y(r, c) += static_cast<S>(bias[c]);
        return y;
    }

    Mat<S> norm(const Mat<S>& x, const std::string& gamma, const std::string& beta) const {
        const Tensor& g = get(gamma);
        const Tensor& b = get(beta);
        Mat<S> y(x.rows, x.cols);
        for (int64_t r = 0; r < x.rows; ++r) {
            S mean = 0;
            for (int64_t c = 0; c < x.cols; ++c) mean += x(r, c);
            mean /= static_cast<S>(x.cols);
            S var = 0;
            for (int64_t c = 0; c < x.cols; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
            var /= static_cast<S>(x.cols);
            const S inv = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
            for (int64_t c = 0; c < x.cols; ++c) y(r, c) = static_cast<S>(g[c]) * (x(r, c) - mean) * inv + static_cast<S>(b[c]);
        }
        return y;
    }

    static Mat<S> product(const Mat<S>& a, const Mat<S>& b) {
        Mat<S> y(a.rows, b.cols);
        for (int64_t i = 0; i < a.rows; ++i)
            for (int64_t k = 0; k < a.cols; ++k)
                for (int64_t j = 0; j < b.cols; ++j) y(i, j) += a(i, k) * b(k, j);
        return y;
    }

    static Mat<S> product_nt(const Mat<S>& a, const Mat<S>& b) {
        Mat<S> y(a.rows, b.rows);
        for (int64_t i = 0; i < a.rows; ++i)
            for (int64_t j = 0; j < b.rows; ++j)
                for (int64_t k = 0; k < a.cols; ++k) y(i, j) += a(i, k) * b(j, k);
        return y;
    }

private:
    const ParameterStore& store_;
    const std::map<std::string, ParamKey>& slots_;
};

template <class S>
void swish_inplace(Mat<S>& x) {
    for (S& v : x.v) v = v * sigmoid(v);
}

template <class S>
void add_into(Mat<S>& x, const Mat<S>& y, S factor) {
    for (size_t i = 0; i < x.v.size(); ++i) x.v[i] += factor * y.v[i];
}

template <class S>
void feed_forward(Mat<S>& x, const Weights<S>& w, const std::string& m) {
    Mat<S> h = w.affine(w.norm(x, m + "ln_gamma", m + "ln_beta"), m + "w1", m + "b1");
    swish_inplace(h);
    add_into(x, w.affine(h, m + "w2", m + "b2"), S(0.5));
}

template <class S>
S positional(int64_t offset, int64_t c, int64_t d) {
    const S freq = std::pow(S(10000), -S(2) * static_cast<S>(c / 2) / static_cast<S>(d));
    const S arg = static_cast<S>(offset) * freq;
    return c % 2 == 0 ? std::sin(arg) : std::cos(arg);
}

template <class S>
void attention(Mat<S>& x, const Weights<S>& w, int64_t heads, int64_t t_max) {
    const int64_t steps = x.rows, d = x.cols, dh = d / heads;
    if (steps > t_max) throw ShapeError("attention: sequence length exceeds T_max");
    const Mat<S> h = w.norm(x, "attention/ln_gamma", "attention/ln_beta");
    const Mat<S> q = w.affine(h, "attention/wq", "attention/bq");
    const Mat<S> k = w.affine(h, "attention/wk", "attention/bk");
    const Mat<S> v = w.affine(h, "attention/wv", "attention/bv");
    const Mat<S> pq = w.affine(h, "attention/wpos", "attention/bpos");
    const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));
    Mat<S> table(2 * steps - 1, d);
    for (int64_t r = 0; r < table.rows; ++r)
        for (int64_t c = 0; c < d; ++c) table(r, c) = positional<S>(r - (steps - 1), c, d);
    Mat<S> context(steps, d);
    std::vector<S> row(static_cast<size_t>(steps));
    for (int64_t hd = 0; hd < heads; ++hd) {
        const int64_t c0 = hd * dh;
        for (int64_t i = 0; i < steps; ++i) {
            S mx = -std::numeric_limits<S>::infinity();
            for (int64_t j = 0; j < steps; ++j) {
                S s = 0;
                for (int64_t c = c0; c < c0 + dh; ++c) s += q(i, c) * k(j, c) + pq(i, c) * table(i - j + steps - 1, c);
                row[static_cast<size_t>(j)] = s * inv_sqrt;
                mx = std::max(mx, row[static_cast<size_t>(j)]);
            }
            S denom = 0;
            for (S& s : row) {
                s = std::exp(s - mx);
                denom += s;
            }
            for (int64_t j = 0; j < steps; ++j) {
                const S a = row[static_cast<size_t>(j)] / denom;
                for (int64_t c = c0; c < c0 + dh; ++c) context(i, c) += a * v(j, c);
            }
        }
    }
    add_into(x, w.affine(context, "attention/wpost", "attention/bpost"), S(1));
}

template <class S>
void conv_module(Mat<S>& x, const Weights<S>& w) {
    const int64_t steps = x.rows, d = x.cols;
    const Mat<S> pre = w.affine(w.norm(x, "conv/ln_gamma", "conv/ln_beta"), "conv/wpre", "conv/bpre");
    Mat<S> gated(steps, d);
    for (int64_t t = 0; t < steps; ++t)
        for (int64_t c = 0; c < d; ++c) gated(t, c) = pre(t, c) * sigmoid(pre(t, c + d));
    const Tensor& kernel = w.get("conv/kdepth");
    const int64_t width = kernel.rows(), pad = (width - 1) / 2;
    Mat<S> conv(steps, d);
    for (int64_t t = 0; t < steps; ++t)
        for (int64_t j = 0; j < width; ++j) {
            const int64_t src = t + j - pad;
            if (src < 0 || src >= steps) continue;
            for (int64_t c = 0; c < d; ++c) conv(t, c) += static_cast<S>(kernel.at(j, c)) * gated(src, c);
        }
    Mat<S> h = w.norm(conv, "conv/norm_gamma", "conv/norm_beta");
    swish_inplace(h);
    add_into(x, w.affine(h, "conv/wpost", "conv/bpost"), S(1));
}

template <class S>
void block(Mat<S>& x, const Weights<S>& w, const ModelConfig& config) {
    feed_forward(x, w, "ff_start/");
    attention(x, w, config.heads, config.t_max);
    conv_module(x, w);
    feed_forward(x, w, "ff_end/");
    x = w.norm(x, "ff_end/final_ln_gamma", "ff_end/final_ln_beta");
}

}  // namespace

template <class S>
std::vector<S> reference_module(ModuleKind module, const ModelConfig& config, const ParameterStore& store,
                                const LayerBinding& layer, const Tensor& x) {
    Mat<S> y = from_tensor<S>(x);
    const Weights<S> w(store, layer.slots);
    switch (module) {
        case ModuleKind::FFStart: feed_forward(y, w, "ff_start/"); break;
        case ModuleKind::Attention: attention(y, w, config.heads, config.t_max); break;
        case ModuleKind::Conv: conv_module(y, w); break;
        case ModuleKind::FFEnd: feed_forward(y, w, "ff_end/"); break;
    }
    return y.v;
}

template <class S>
std::vector<S> reference_block(const ModelConfig& config, const ParameterStore& store, const LayerBinding& layer,
                               const Tensor& x) {
    Mat<S> y = from_tensor<S>(x);
    block(y, Weights<S>(store, layer.slots), config);
    return y.v;
}

template <class S>
std::vector<S> reference_logits(const ModelConfig& config, const ParameterStore& store, const BoundSchedule& schedule,
                                const Tensor& features) {
    if (!schedule.bound() || schedule.store_token != store.token()) {
        throw std::logic_error("reference forward: schedule is not bound to this store");
    }
    Mat<S> x = Weights<S>(store, schedule.frontend).affine(from_tensor<S>(features), "w", "b");
    for (const LayerBinding& lb : schedule.layers) {
        block(x, Weights<S>(store, lb.slots), config);
    }
    return Weights<S>(store, schedule.head).affine(x, "w", "b").v;
}

template <class S>
S reference_batch_loss(const ModelConfig& config, const ParameterStore& store, const BoundSchedule& schedule,
                       const ToyBatch& batch) {
    const int64_t utterances = batch.features.dim(0), frames = batch.features.dim(1), feat = batch.features.dim(2);
    const int64_t classes = config.num_classes;
    S total = 0;
    for (int64_t u = 0; u < utterances; ++u) {
        const double* start = batch.features.data().data() + u * frames * feat;
        const Tensor utt({frames, feat}, std::vector<double>(start, start + frames * feat));
        const std::vector<S> logits = reference_logits<S>(config, store, schedule, utt);
        S utt_loss = 0;
        for (int64_t t = 0; t < frames; ++t) {
            const S* row = logits.data() + t * classes;
            const S mx = *std::max_element(row, row + classes);
            S denom = 0;
            for (int64_t c = 0; c < classes; ++c) denom += std::exp(row[c] - mx);
            utt_loss += mx + std::log(denom) - row[batch.labels[static_cast<size_t>(u * frames + t)]];
        }
        total += utt_loss / static_cast<S>(frames);
    }
    return total / static_cast<S>(utterances);
}

template std::vector<double> reference_logits<double>(const ModelConfig&, const ParameterStore&, const BoundSchedule&,
                                                      const Tensor&);
template std::vector<long double> reference_logits<long double>(const ModelConfig&, const ParameterStore&,
                                                                const BoundSchedule&, const Tensor&);
template std::vector<double> reference_module<double>(ModuleKind, const ModelConfig&, const ParameterStore&,
                                                      const LayerBinding&, const Tensor&);
template std::vector<long double> reference_module<long double>(ModuleKind, const ModelConfig&, const ParameterStore&,
                                                                const LayerBinding&, const Tensor&);
template std::vector<double> reference_block<double>(const ModelConfig&, const ParameterStore&, const LayerBinding&,
                                                     const Tensor&);
template std::vector<long double> reference_block<long double>(const ModelConfig&, const ParameterStore&,
                                                               const LayerBinding&, const Tensor&);
template double reference_batch_loss<double>(const ModelConfig&, const ParameterStore&, const BoundSchedule&,
                                             const ToyBatch&);
template long double reference_batch_loss<long double>(const ModelConfig&, const ParameterStore&, const BoundSchedule&,
                                                       const ToyBatch&);

}  // namespace confshare
