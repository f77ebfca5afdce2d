#pragma once

#include <cstdint>
#include <utility>

#include "confshare/ops.hpp"

namespace confshare {

/// Rank applied to both feed-forward linears of every block.
struct LowRankSpec {
    int64_t rank = 0;
    bool operator==(const LowRankSpec&) const = default;
};

/// Factorized linear layer y = (x·U)·Vᵀ + b with U: m×k, V: n×k, b: n.
struct LowRankLinearParams {
    Var u;
    Var v;
    Var bias;
};

/// Checks factor shapes, 1 ≤ k ≤ min(m, n), and the bias extent.
void check_lowrank_shapes(const Tensor& u, const Tensor& v, const Tensor& bias);

/// Evaluated as (x·U)·Vᵀ + b; the m×n product UVᵀ is never formed.
Var lowrank_forward(Var x, const LowRankLinearParams& p);

/// k·(m+n), plus n when the bias is counted.
int64_t lowrank_param_count(int64_t m, int64_t n, int64_t k, bool with_bias);
int64_t dense_param_count(int64_t m, int64_t n, bool with_bias);
/// True when a rank-k factorization of an m×n matrix stores fewer weights than the dense matrix.
bool lowrank_reduces(int64_t m, int64_t n, int64_t k);
/// Throws std::invalid_argument unless 1 ≤ k ≤ min(m, n) and the factorization reduces the weight count.
void check_factor_rank(int64_t m, int64_t n, int64_t k);

/// Leading-k singular triplets, M ≈ U·diag(sigma)·Vᵀ.
struct SvdResult {
    Tensor u;      // m×k, orthonormal columns
    Tensor sigma;  // k, non-negative and non-increasing
    Tensor v;      // n×k, orthonormal columns
};

class SvdNoConvergence : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One-sided Jacobi sweeps stop once every column pair has
/// |cos| ≤ 1e-10; at most this many sweeps run before SvdNoConvergence.
inline constexpr int kSvdMaxSweeps = 60;
inline constexpr int64_t kSvdMaxExtent = 512;

/// Truncated SVD of an m×n matrix (extents ≤ 512), 1 ≤ k ≤ min(m, n).
SvdResult svd_truncate(const Tensor& m, int64_t k);

/// U·diag(sigma)·Vᵀ.
Tensor svd_reconstruct(const SvdResult& r);

/// Splits sigma evenly between the factors: U' = U·diag(√σ), V' = V·diag(√σ).
std::pair<Tensor, Tensor> fold_sigma(const SvdResult& r);

}  // namespace confshare
