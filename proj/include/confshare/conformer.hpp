#pragma once

#include <cstdint>
#include <vector>

#include "confshare/lowrank.hpp"
#include "confshare/model_config.hpp"
#include "confshare/ops.hpp"

namespace confshare {

inline constexpr double kLayerNormEps = 1e-5;

/// Linear layer y = x·W + b with W: in×out, or its factorized form when `u` is set.
struct LinearParams {
    Var weight;
    Var u;
    Var v;
    Var bias;

    bool low_rank() const { return u.valid(); }
};

Var linear(Var x, const LinearParams& p);

struct FeedForwardParams {
    Var ln_gamma, ln_beta;
    LinearParams lin1;  // d → ff_hidden
    LinearParams lin2;  // ff_hidden → d
};

struct AttentionParams {
    int64_t heads = 1;
    Var ln_gamma, ln_beta;
    LinearParams query, key, value, post, pos_query;
    /// Sinusoidal table over relative offsets −(T_max−1)..(T_max−1), (2·T_max−1)×d.
    /// A constant on the tape, not a trained parameter.
    Var rel_emb;
};

struct ConvParams {
    Var ln_gamma, ln_beta;
    LinearParams pre;        // d → 2d, halved by GLU
    Var depth_kernel;        // w×d
    Var norm_gamma, norm_beta;
    LinearParams post;       // d → d
};

struct BlockParams {
    FeedForwardParams ff_start;
    AttentionParams attn;
    ConvParams conv;
    FeedForwardParams ff_end;
    Var final_ln_gamma, final_ln_beta;
};

/// Row r holds offset (r − (t_max − 1)); even columns sin, odd columns cos.
Tensor relative_position_table(int64_t t_max, int64_t d);

/// x + ½·(swish(LN(x)·W1 + b1)·W2 + b2)
Var feed_forward(Var x, const FeedForwardParams& p);

/// Multi-head self-attention with relative positional scores and a residual.
/// Throws ShapeError when T exceeds the table's T_max.
Var attention(Var x, const AttentionParams& p);

/// x + swish(LN_norm(depthwise(glu(LN(x)·Wpre + bpre)))) · Wpost + bpost
Var conv_module(Var x, const ConvParams& p);

/// final_LN(ff_end(conv(attention(ff_start(x)))))
Var conformer_block(Var x, const BlockParams& p);

struct EncoderParams {
    LinearParams frontend;              // input_dim → d
    std::vector<BlockParams> layers;    // one entry per virtual layer, in application order
    LinearParams head;                  // d → num_classes
};

struct ForwardStats {
    int64_t block_evaluations = 0;
};

/// head(layers[V-1](…layers[0](frontend(features))…)).
Var encoder_forward(Var features, const EncoderParams& p, ForwardStats* stats = nullptr);

}  // namespace confshare
