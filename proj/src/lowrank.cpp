#include "confshare/lowrank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace confshare {

void check_lowrank_shapes(const Tensor& u, const Tensor& v, const Tensor& bias) {
    if (u.rank() != 2 || v.rank() != 2) {
        throw ShapeError("low-rank factors must be matrices, got U " + shape_str(u.shape()) + " and V " +
                         shape_str(v.shape()));
    }
    const int64_t m = u.rows(), n = v.rows(), k = u.cols();
    if (v.cols() != k) {
        throw ShapeError("low-rank factors disagree on rank: U " + shape_str(u.shape()) + ", V " + shape_str(v.shape()));
    }
    if (k < 1 || k > std::min(m, n)) {
        throw ShapeError("low-rank rank " + std::to_string(k) + " outside [1, min(" + std::to_string(m) + ", " +
                         std::to_string(n) + ")]");
    }
    if (bias.numel() != n) {
        throw ShapeError("low-rank bias " + shape_str(bias.shape()) + " does not match output extent " +
                         std::to_string(n));
    }
}

Var lowrank_forward(Var x, const LowRankLinearParams& p) {
    check_lowrank_shapes(p.u.value(), p.v.value(), p.bias.value());
    if (x.value().cols() != p.u.value().rows()) {
        throw ShapeError("lowrank_forward: input " + shape_str(x.value().shape()) + " does not match U " +
                         shape_str(p.u.value().shape()));
    }
    return add_bias(matmul_nt(matmul(x, p.u), p.v), p.bias);
}

int64_t lowrank_param_count(int64_t m, int64_t n, int64_t k, bool with_bias) {
    return k * (m + n) + (with_bias ? n : 0);
}

int64_t dense_param_count(int64_t m, int64_t n, bool with_bias) { return m * n + (with_bias ? n : 0); }

bool lowrank_reduces(int64_t m, int64_t n, int64_t k) { return k >= 1 && k * (m + n) < m * n; }

void check_factor_rank(int64_t m, int64_t n, int64_t k) {
    if (k < 1 || k > std::min(m, n)) {
        throw std::invalid_argument("low-rank rank " + std::to_string(k) + " outside [1, min(" + std::to_string(m) +
                                    ", " + std::to_string(n) + ")]");
    }
    if (!lowrank_reduces(m, n, k)) {
        throw std::invalid_argument("low-rank rank " + std::to_string(k) + " does not reduce the " + std::to_string(m) +
                                    "x" + std::to_string(n) + " weight count");
    }
}

namespace {

// One-sided Jacobi on the columns of A (m×n, m ≥ n). On return the columns of
// A are U·Σ and W accumulates the right rotations.
void jacobi_sweeps(std::vector<double>& a, int64_t m, int64_t n, std::vector<double>& w) {
    constexpr double tol = 1e-10;
    for (int sweep = 0; sweep < kSvdMaxSweeps; ++sweep) {
        bool rotated = false;
        for (int64_t p = 0; p + 1 < n; ++p) {
            for (int64_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (int64_t i = 0; i < m; ++i) {
                    const double ap = a[i * n + p], aq = a[i * n + q];
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int64_t i = 0; i < m; ++i) {
                    const double ap = a[i * n + p], aq = a[i * n + q];
                    a[i * n + p] = c * ap - s * aq;
                    a[i * n + q] = s * ap + c * aq;
                }
                for (int64_t i = 0; i < n; ++i) {
                    const double wp = w[i * n + p], wq = w[i * n + q];
                    w[i * n + p] = c * wp - s * wq;
                    w[i * n + q] = s * wp + c * wq;
                }
            }
        }
        if (!rotated) return;
    }
    throw SvdNoConvergence("svd_truncate: Jacobi sweeps did not converge within " + std::to_string(kSvdMaxSweeps) +
                           " sweeps");
}

}  // namespace

SvdResult svd_truncate(const Tensor& mat, int64_t k) {
    if (mat.rank() != 2) throw ShapeError("svd_truncate: expected a matrix, got " + shape_str(mat.shape()));
    if (!mat.all_finite()) throw NonFiniteError("svd_truncate: input holds non-finite values");
    const int64_t rows = mat.rows(), cols = mat.cols();
    if (rows > kSvdMaxExtent || cols > kSvdMaxExtent) {
        throw ShapeError("svd_truncate: extents of " + shape_str(mat.shape()) + " exceed " +
                         std::to_string(kSvdMaxExtent));
    }
    if (k < 1 || k > std::min(rows, cols)) {
        throw std::invalid_argument("svd_truncate: k=" + std::to_string(k) + " outside [1, " +
                                    std::to_string(std::min(rows, cols)) + "]");
    }

    // Work on the tall orientation; swap roles of U and V for wide inputs.
    const bool wide = cols > rows;
    const int64_t m = wide ? cols : rows;
    const int64_t n = wide ? rows : cols;
    std::vector<double> a(static_cast<size_t>(m * n));
    for (int64_t i = 0; i < rows; ++i) {
        for (int64_t j = 0; j < cols; ++j) {
            if (wide) a[j * n + i] = mat.at(i, j);
            else a[i * n + j] = mat.at(i, j);
        }
    }
    std::vector<double> w(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; ++i) w[i * n + i] = 1.0;
    jacobi_sweeps(a, m, n, w);

    std::vector<double> norms(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (int64_t i = 0; i < m; ++i) s += a[i * n + j] * a[i * n + j];
        norms[static_cast<size_t>(j)] = std::sqrt(s);
    }
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t x, int64_t y) {
        return norms[static_cast<size_t>(x)] > norms[static_cast<size_t>(y)];
    });

    Tensor left({m, k}, 0.0), right({n, k}, 0.0), sigma({k}, 0.0);
    for (int64_t c = 0; c < k; ++c) {
        const int64_t j = order[static_cast<size_t>(c)];
        const double s = norms[static_cast<size_t>(j)];
        sigma[c] = s;
        for (int64_t i = 0; i < n; ++i) right.at(i, c) = w[i * n + j];
        if (s > 0.0) {
            for (int64_t i = 0; i < m; ++i) left.at(i, c) = a[i * n + j] / s;
        }
    }
    // Columns with zero singular value have no direction from A; complete them
    // to an orthonormal set by Gram-Schmidt against unit vectors.
    for (int64_t c = 0; c < k; ++c) {
        if (sigma[c] > 0.0) continue;
        for (int64_t e = 0; e < m; ++e) {
            std::vector<double> cand(static_cast<size_t>(m), 0.0);
            cand[static_cast<size_t>(e)] = 1.0;
            for (int64_t p = 0; p < k; ++p) {
                if (p == c || (sigma[p] == 0.0 && p > c)) continue;
                double dot = 0.0;
                for (int64_t i = 0; i < m; ++i) dot += left.at(i, p) * cand[static_cast<size_t>(i)];
                for (int64_t i = 0; i < m; ++i) cand[static_cast<size_t>(i)] -= dot * left.at(i, p);
            }
            double nrm = 0.0;
            for (double v : cand) nrm += v * v;
            nrm = std::sqrt(nrm);
            if (nrm > 1e-6) {
                for (int64_t i = 0; i < m; ++i) left.at(i, c) = cand[static_cast<size_t>(i)] / nrm;
                break;
            }
        }
    }
    if (wide) return SvdResult{std::move(right), std::move(sigma), std::move(left)};
    return SvdResult{std::move(left), std::move(sigma), std::move(right)};
}

Tensor svd_reconstruct(const SvdResult& r) {
    const int64_t m = r.u.rows(), n = r.v.rows(), k = r.sigma.numel();
    Tensor out({m, n}, 0.0);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t c = 0; c < k; ++c) acc += r.u.at(i, c) * r.sigma[c] * r.v.at(j, c);
            out.at(i, j) = acc;
        }
    }
    return out;
}

std::pair<Tensor, Tensor> fold_sigma(const SvdResult& r) {
    Tensor u = r.u, v = r.v;
    const int64_t k = r.sigma.numel();
    for (int64_t c = 0; c < k; ++c) {
        const double root = std::sqrt(r.sigma[c]);
        for (int64_t i = 0; i < u.rows(); ++i) u.at(i, c) *= root;
        for (int64_t i = 0; i < v.rows(); ++i) v.at(i, c) *= root;
    }
    return {std::move(u), std::move(v)};
}

}  // namespace confshare
