#pragma once

#include <span>
#include <vector>

#include "confshare/tape.hpp"

namespace confshare {

enum class Activation { swish, glu, sigmoid };

// Matrix products. Each C[i][j] is accumulated sequentially over the inner index.
Var matmul(Var a, Var b);
/// a · bᵀ without materializing the transpose.
Var matmul_nt(Var a, Var b);

Var add(Var a, Var b);
/// Adds vector `bias` to every row of `x`.
Var add_bias(Var x, Var bias);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var sum(Var x);

Var sigmoid(Var x);
Var swish(Var x);
/// Splits the last extent into halves a, b and returns a ⊙ sigmoid(b).
Var glu(Var x);
Var activation(Var x, Activation kind);

/// Row-wise layer normalization with population variance.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Row-wise softmax with max subtraction.
Var softmax(Var x);

/// Same-padded depthwise convolution over time. x: T×d, kernel: w×d with odd w.
Var depthwise_conv1d(Var x, Var kernel);

Var slice_cols(Var x, int64_t start, int64_t count);
Var concat_cols(std::span<const Var> parts);

/// Maps scores against relative offsets to absolute positions:
/// out[i][j] = g[i][i - j + T - 1] for g of shape T×(2T-1).
Var rel_shift(Var g);

/// Mean framewise cross-entropy of row logits against integer labels.
Var cross_entropy(Var logits, std::span<const int> labels);

// Plain-value kernels shared by ops and callers that do not need a tape.
Tensor matmul_values(const Tensor& a, const Tensor& b);
Tensor softmax_values(const Tensor& x);
double sigmoid_value(double x);

}  // namespace confshare
