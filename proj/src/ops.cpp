#include "confshare/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace confshare {

namespace {

Tape& tape_of(Var a) {
    if (!a.valid()) throw std::invalid_argument("operation on an unbound Var");
    return *a.tape;
}

void same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw std::invalid_argument("operands recorded on different tapes");
}

void require_matrix(const Tensor& t, const char* op, const char* what) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": " + what + " must be a matrix, got " + shape_str(t.shape()));
    }
}

bool any_grad(Tape& t, std::initializer_list<Var> vs) {
    for (Var v : vs) {
        if (t.requires_grad(v)) return true;
    }
    return false;
}

}  // namespace

double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Tensor matmul_values(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul", "left operand");
    require_matrix(b, "matmul", "right operand");
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner extents differ for " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    Tensor c({m, n}, 0.0);
    const double* ap = a.data().data();
    const double* bp = b.data().data();
    double* cp = c.data().data();
    for (int64_t i = 0; i < m; ++i) {
        double* crow = cp + i * n;
        for (int64_t t = 0; t < k; ++t) {
            const double av = ap[i * k + t];
            const double* brow = bp + t * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Var matmul(Var a, Var b) {
    same_tape(a, b);
    Tape& t = tape_of(a);
    Tensor out = matmul_values(a.value(), b.value());
    return t.record(std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, const Tensor& g) {
        const Tensor& av = tp.value(a);
        const Tensor& bv = tp.value(b);
        const int64_t m = av.rows(), k = av.cols(), n = bv.cols();
        if (tp.requires_grad(a)) {
            // dA = dC · Bᵀ
            Tensor& ga = tp.grad_buffer(a);
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t s = 0; s < k; ++s) {
                    double acc = 0.0;
                    for (int64_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[s * n + j];
                    ga[i * k + s] += acc;
                }
            }
        }
        if (tp.requires_grad(b)) {
            // dB = Aᵀ · dC
            Tensor db({k, n}, 0.0);
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t s = 0; s < k; ++s) {
                    const double av_is = av[i * k + s];
                    for (int64_t j = 0; j < n; ++j) db[s * n + j] += av_is * g[i * n + j];
                }
            }
            Tensor& gb = tp.grad_buffer(b);
            for (int64_t q = 0; q < db.numel(); ++q) gb[q] += db[q];
        }
    }, "matmul");
}

Var matmul_nt(Var a, Var b) {
    same_tape(a, b);
    Tape& t = tape_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_matrix(av, "matmul_nt", "left operand");
    require_matrix(bv, "matmul_nt", "right operand");
    const int64_t m = av.rows(), k = av.cols(), n = bv.rows();
    if (bv.cols() != k) {
        throw ShapeError("matmul_nt: inner extents differ for " + shape_str(av.shape()) + " and transpose of " +
                         shape_str(bv.shape()));
    }
    Tensor out({m, n}, 0.0);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t s = 0; s < k; ++s) acc += av[i * k + s] * bv[j * k + s];
            out[i * n + j] = acc;
        }
    }
    return t.record(std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, const Tensor& g) {
        const Tensor& av = tp.value(a);
        const Tensor& bv = tp.value(b);
        const int64_t m = av.rows(), k = av.cols(), n = bv.rows();
        if (tp.requires_grad(a)) {
            // dA = dC · B
            Tensor da({m, k}, 0.0);
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < n; ++j) {
                    const double gij = g[i * n + j];
                    for (int64_t s = 0; s < k; ++s) da[i * k + s] += gij * bv[j * k + s];
                }
            }
            Tensor& ga = tp.grad_buffer(a);
            for (int64_t q = 0; q < da.numel(); ++q) ga[q] += da[q];
        }
        if (tp.requires_grad(b)) {
            // dB = dCᵀ · A
            Tensor db({n, k}, 0.0);
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < n; ++j) {
                    const double gij = g[i * n + j];
                    for (int64_t s = 0; s < k; ++s) db[j * k + s] += gij * av[i * k + s];
                }
            }
            Tensor& gb = tp.grad_buffer(b);
            for (int64_t q = 0; q < db.numel(); ++q) gb[q] += db[q];
        }
    }, "matmul_nt");
}

Var add(Var a, Var b) {
    same_tape(a, b);
    Tape& t = tape_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) {
        throw ShapeError("add: shapes differ, " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    }
    Tensor out = av;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return t.record(std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, const Tensor& g) {
        for (Var v : {a, b}) {
            if (!tp.requires_grad(v)) continue;
            Tensor& gv = tp.grad_buffer(v);
            for (int64_t i = 0; i < g.numel(); ++i) gv[i] += g[i];
        }
    }, "add");
}

Var add_bias(Var x, Var bias) {
    same_tape(x, bias);
    Tape& t = tape_of(x);
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    const int64_t n = xv.cols();
    if (bv.numel() != n) {
        throw ShapeError("add_bias: bias " + shape_str(bv.shape()) + " does not match rows of " + shape_str(xv.shape()));
    }
    Tensor out = xv;
    const int64_t rows = xv.numel() / n;
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
    }
    return t.record(std::move(out), any_grad(t, {x, bias}), [x, bias](Tape& tp, const Tensor& g) {
        const int64_t n = tp.value(bias).numel();
        const int64_t rows = g.numel() / n;
        if (tp.requires_grad(x)) {
            Tensor& gx = tp.grad_buffer(x);
            for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
        }
        if (tp.requires_grad(bias)) {
            Tensor& gb = tp.grad_buffer(bias);
            for (int64_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int64_t r = 0; r < rows; ++r) acc += g[r * n + j];
                gb[j] += acc;
            }
        }
    }, "add_bias");
}

Var mul(Var a, Var b) {
    same_tape(a, b);
    Tape& t = tape_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) {
        throw ShapeError("mul: shapes differ, " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    }
    Tensor out = av;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    return t.record(std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, const Tensor& g) {
        const Tensor& av = tp.value(a);
        const Tensor& bv = tp.value(b);
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_buffer(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
        }
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_buffer(b);
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
        }
    }, "mul");
}

Var scale(Var x, double factor) {
    Tape& t = tape_of(x);
    Tensor out = x.value();
    for (double& v : out.storage()) v *= factor;
    return t.record(std::move(out), t.requires_grad(x), [x, factor](Tape& tp, const Tensor& g) {
        Tensor& gx = tp.grad_buffer(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * factor;
    }, "scale");
}

Var sum(Var x) {
    Tape& t = tape_of(x);
    double acc = 0.0;
    for (double v : x.value().data()) acc += v;
    return t.record(Tensor::scalar(acc), t.requires_grad(x), [x](Tape& tp, const Tensor& g) {
        Tensor& gx = tp.grad_buffer(x);
        for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g[0];
    }, "sum");
}

Var sigmoid(Var x) {
    Tape& t = tape_of(x);
    Tensor out = x.value();
    for (double& v : out.storage()) v = sigmoid_value(v);
    return t.record(std::move(out), t.requires_grad(x), [x](Tape& tp, const Tensor& g) {
        const Tensor& xv = tp.value(x);
        Tensor& gx = tp.grad_buffer(x);
        for (int64_t i = 0; i < g.numel(); ++i) {
            const double s = sigmoid_value(xv[i]);
            gx[i] += g[i] * s * (1.0 - s);
        }
    }, "sigmoid");
}

Var swish(Var x) {
    Tape& t = tape_of(x);
    Tensor out = x.value();
    for (double& v : out.storage()) v = v * sigmoid_value(v);
    return t.record(std::move(out), t.requires_grad(x), [x](Tape& tp, const Tensor& g) {
        const Tensor& xv = tp.value(x);
        Tensor& gx = tp.grad_buffer(x);
        for (int64_t i = 0; i < g.numel(); ++i) {
            const double s = sigmoid_value(xv[i]);
            gx[i] += g[i] * s * (1.0 + xv[i] * (1.0 - s));
        }
    }, "swish");
}

Var glu(Var x) {
    Tape& t = tape_of(x);
    const Tensor& xv = x.value();
    const int64_t width = xv.cols();
    if (width % 2 != 0) {
        throw ShapeError("glu: last extent must be even, got shape " + shape_str(xv.shape()));
    }
    const int64_t half = width / 2;
    const int64_t rows = xv.numel() / width;
    Shape out_shape = xv.shape();
    out_shape.back() = half;
    Tensor out(out_shape, 0.0);
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < half; ++j) {
            out[r * half + j] = xv[r * width + j] * sigmoid_value(xv[r * width + half + j]);
        }
    }
    return t.record(std::move(out), t.requires_grad(x), [x](Tape& tp, const Tensor& g) {
        const Tensor& xv = tp.value(x);
        const int64_t width = xv.cols();
        const int64_t half = width / 2;
        const int64_t rows = xv.numel() / width;
        Tensor& gx = tp.grad_buffer(x);
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t j = 0; j < half; ++j) {
                const double a = xv[r * width + j];
                const double s = sigmoid_value(xv[r * width + half + j]);
                const double gj = g[r * half + j];
                gx[r * width + j] += gj * s;
                gx[r * width + half + j] += gj * a * s * (1.0 - s);
            }
        }
    }, "glu");
}

Var activation(Var x, Activation kind) {
    switch (kind) {
        case Activation::swish: return swish(x);
        case Activation::glu: return glu(x);
        case Activation::sigmoid: return sigmoid(x);
    }
    throw std::invalid_argument("unknown activation");
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    same_tape(x, gamma);
    same_tape(x, beta);
    Tape& t = tape_of(x);
    if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
    const Tensor& xv = x.value();
    const int64_t d = xv.cols();
    if (gamma.value().numel() != d || beta.value().numel() != d) {
        throw ShapeError("layer_norm: gamma " + shape_str(gamma.value().shape()) + " / beta " +
                         shape_str(beta.value().shape()) + " do not match input " + shape_str(xv.shape()));
    }
    const int64_t rows = xv.numel() / d;
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    Tensor out(xv.shape(), 0.0);
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = xv.data().data() + r * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t j = 0; j < d; ++j) out[r * d + j] = gv[j] * (row[j] - mean) * inv + bv[j];
    }
    return t.record(std::move(out), any_grad(t, {x, gamma, beta}), [x, gamma, beta, eps](Tape& tp, const Tensor& g) {
        const Tensor& xv = tp.value(x);
        const Tensor& gv = tp.value(gamma);
        const int64_t d = xv.cols();
        const int64_t rows = xv.numel() / d;
        const double nd = static_cast<double>(d);
        std::vector<double> xhat(static_cast<size_t>(d));
        std::vector<double> dxhat(static_cast<size_t>(d));
        Tensor* ggamma = tp.requires_grad(gamma) ? &tp.grad_buffer(gamma) : nullptr;
        Tensor* gbeta = tp.requires_grad(beta) ? &tp.grad_buffer(beta) : nullptr;
        Tensor* gx = tp.requires_grad(x) ? &tp.grad_buffer(x) : nullptr;
        for (int64_t r = 0; r < rows; ++r) {
            const double* row = xv.data().data() + r * d;
            double mean = 0.0;
            for (int64_t j = 0; j < d; ++j) mean += row[j];
            mean /= nd;
            double var = 0.0;
            for (int64_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
            var /= nd;
            const double inv = 1.0 / std::sqrt(var + eps);
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (int64_t j = 0; j < d; ++j) {
                const size_t uj = static_cast<size_t>(j);
                xhat[uj] = (row[j] - mean) * inv;
                const double gy = g[r * d + j];
                if (ggamma) (*ggamma)[j] += gy * xhat[uj];
                if (gbeta) (*gbeta)[j] += gy;
                dxhat[uj] = gy * gv[j];
                mean_dxhat += dxhat[uj];
                mean_dxhat_xhat += dxhat[uj] * xhat[uj];
            }
            if (!gx) continue;
            mean_dxhat /= nd;
            mean_dxhat_xhat /= nd;
            for (int64_t j = 0; j < d; ++j) {
                const size_t uj = static_cast<size_t>(j);
                (*gx)[r * d + j] += inv * (dxhat[uj] - mean_dxhat - xhat[uj] * mean_dxhat_xhat);
            }
        }
    }, "layer_norm");
}

Tensor softmax_values(const Tensor& x) {
    const int64_t n = x.cols();
    const int64_t rows = x.numel() / n;
    Tensor out(x.shape(), 0.0);
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = x.data().data() + r * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            const double e = std::exp(row[j] - mx);
            out[r * n + j] = e;
            denom += e;
        }
        for (int64_t j = 0; j < n; ++j) out[r * n + j] /= denom;
    }
    return out;
}

Var softmax(Var x) {
    Tape& t = tape_of(x);
    Tensor out = softmax_values(x.value());
    return t.record(std::move(out), t.requires_grad(x), [x](Tape& tp, const Tensor& g) {
        const Tensor p = softmax_values(tp.value(x));
        const int64_t n = p.cols();
        const int64_t rows = p.numel() / n;
        Tensor& gx = tp.grad_buffer(x);
        for (int64_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (int64_t j = 0; j < n; ++j) dot += g[r * n + j] * p[r * n + j];
            for (int64_t j = 0; j < n; ++j) gx[r * n + j] += p[r * n + j] * (g[r * n + j] - dot);
        }
    }, "softmax");
}

Var depthwise_conv1d(Var x, Var kernel) {
    same_tape(x, kernel);
    Tape& t = tape_of(x);
    const Tensor& xv = x.value();
    const Tensor& kv = kernel.value();
    require_matrix(xv, "depthwise_conv1d", "input");
    require_matrix(kv, "depthwise_conv1d", "kernel");
    const int64_t steps = xv.rows(), d = xv.cols(), w = kv.rows();
    if (kv.cols() != d) {
        throw ShapeError("depthwise_conv1d: kernel " + shape_str(kv.shape()) + " does not match input " +
                         shape_str(xv.shape()));
    }
    if (w % 2 == 0) throw ShapeError("depthwise_conv1d: kernel width must be odd, got " + std::to_string(w));
    const int64_t pad = (w - 1) / 2;
    Tensor out({steps, d}, 0.0);
    for (int64_t ti = 0; ti < steps; ++ti) {
        for (int64_t j = 0; j < w; ++j) {
            const int64_t src = ti + j - pad;
            if (src < 0 || src >= steps) continue;
            for (int64_t c = 0; c < d; ++c) out[ti * d + c] += kv[j * d + c] * xv[src * d + c];
        }
    }
    return t.record(std::move(out), any_grad(t, {x, kernel}), [x, kernel](Tape& tp, const Tensor& g) {
        const Tensor& xv = tp.value(x);
        const Tensor& kv = tp.value(kernel);
        const int64_t steps = xv.rows(), d = xv.cols(), w = kv.rows();
        const int64_t pad = (w - 1) / 2;
        Tensor* gx = tp.requires_grad(x) ? &tp.grad_buffer(x) : nullptr;
        Tensor* gk = tp.requires_grad(kernel) ? &tp.grad_buffer(kernel) : nullptr;
        for (int64_t ti = 0; ti < steps; ++ti) {
            for (int64_t j = 0; j < w; ++j) {
                const int64_t src = ti + j - pad;
                if (src < 0 || src >= steps) continue;
                for (int64_t c = 0; c < d; ++c) {
                    const double gy = g[ti * d + c];
                    if (gk) (*gk)[j * d + c] += gy * xv[src * d + c];
                    if (gx) (*gx)[src * d + c] += gy * kv[j * d + c];
                }
            }
        }
    }, "depthwise_conv1d");
}

Var slice_cols(Var x, int64_t start, int64_t count) {
    Tape& t = tape_of(x);
    const Tensor& xv = x.value();
    require_matrix(xv, "slice_cols", "input");
    const int64_t rows = xv.rows(), cols = xv.cols();
    if (start < 0 || count <= 0 || start + count > cols) {
        throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_str(xv.shape()));
    }
    Tensor out({rows, count}, 0.0);
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < count; ++c) out[r * count + c] = xv[r * cols + start + c];
    }
    return t.record(std::move(out), t.requires_grad(x), [x, start, count](Tape& tp, const Tensor& g) {
        Tensor& gx = tp.grad_buffer(x);
        const int64_t cols = gx.cols();
        const int64_t rows = gx.rows();
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t c = 0; c < count; ++c) gx[r * cols + start + c] += g[r * count + c];
        }
    }, "slice_cols");
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    Tape& t = tape_of(parts[0]);
    const int64_t rows = parts[0].value().rows();
    int64_t total = 0;
    bool grad = false;
    for (Var p : parts) {
        same_tape(parts[0], p);
        require_matrix(p.value(), "concat_cols", "input");
        if (p.value().rows() != rows) {
            throw ShapeError("concat_cols: row count mismatch, " + shape_str(parts[0].value().shape()) + " vs " +
                             shape_str(p.value().shape()));
        }
        total += p.value().cols();
        grad = grad || t.requires_grad(p);
    }
    Tensor out({rows, total}, 0.0);
    int64_t offset = 0;
    for (Var p : parts) {
        const Tensor& pv = p.value();
        const int64_t c = pv.cols();
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t j = 0; j < c; ++j) out[r * total + offset + j] = pv[r * c + j];
        }
        offset += c;
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return t.record(std::move(out), grad, [inputs](Tape& tp, const Tensor& g) {
        const int64_t total = g.cols();
        const int64_t rows = g.rows();
        int64_t offset = 0;
        for (Var p : inputs) {
            const int64_t c = tp.value(p).cols();
            if (tp.requires_grad(p)) {
                Tensor& gp = tp.grad_buffer(p);
                for (int64_t r = 0; r < rows; ++r) {
                    for (int64_t j = 0; j < c; ++j) gp[r * c + j] += g[r * total + offset + j];
                }
            }
            offset += c;
        }
    }, "concat_cols");
}

Var rel_shift(Var g) {
    Tape& t = tape_of(g);
    const Tensor& gv = g.value();
    require_matrix(gv, "rel_shift", "input");
    const int64_t steps = gv.rows();
    if (gv.cols() != 2 * steps - 1) {
        throw ShapeError("rel_shift: expected T x (2T-1), got " + shape_str(gv.shape()));
    }
    const int64_t width = gv.cols();
    Tensor out({steps, steps}, 0.0);
    for (int64_t i = 0; i < steps; ++i) {
        for (int64_t j = 0; j < steps; ++j) out[i * steps + j] = gv[i * width + (i - j + steps - 1)];
    }
    return t.record(std::move(out), t.requires_grad(g), [g](Tape& tp, const Tensor& grad) {
        Tensor& gg = tp.grad_buffer(g);
        const int64_t steps = gg.rows();
        const int64_t width = gg.cols();
        for (int64_t i = 0; i < steps; ++i) {
            for (int64_t j = 0; j < steps; ++j) gg[i * width + (i - j + steps - 1)] += grad[i * steps + j];
        }
    }, "rel_shift");
}

Var cross_entropy(Var logits, std::span<const int> labels) {
    Tape& t = tape_of(logits);
    const Tensor& lv = logits.value();
    require_matrix(lv, "cross_entropy", "logits");
    const int64_t rows = lv.rows(), classes = lv.cols();
    if (static_cast<int64_t>(labels.size()) != rows) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(lv.shape()));
    }
    for (int label : labels) {
        if (label < 0 || label >= classes) {
            throw std::out_of_range("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                                    std::to_string(classes) + ")");
        }
    }
    double total = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = lv.data().data() + r * classes;
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < classes; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < classes; ++j) denom += std::exp(row[j] - mx);
        total += mx + std::log(denom) - row[labels[static_cast<size_t>(r)]];
    }
    std::vector<int> lab(labels.begin(), labels.end());
    return t.record(Tensor::scalar(total / static_cast<double>(rows)), t.requires_grad(logits),
                    [logits, lab = std::move(lab)](Tape& tp, const Tensor& g) {
        const Tensor p = softmax_values(tp.value(logits));
        const int64_t rows = p.rows(), classes = p.cols();
        const double coef = g[0] / static_cast<double>(rows);
        Tensor& gl = tp.grad_buffer(logits);
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t j = 0; j < classes; ++j) {
                const double onehot = (j == lab[static_cast<size_t>(r)]) ? 1.0 : 0.0;
                gl[r * classes + j] += coef * (p[r * classes + j] - onehot);
            }
        }
    }, "cross_entropy");
}

}  // namespace confshare
