#include "confshare/conformer.hpp"

#include <cmath>
#include <string>

namespace confshare {

Var linear(Var x, const LinearParams& p) {
    if (p.low_rank()) return lowrank_forward(x, LowRankLinearParams{p.u, p.v, p.bias});
    return add_bias(matmul(x, p.weight), p.bias);
}

Tensor relative_position_table(int64_t t_max, int64_t d) {
    Tensor table({2 * t_max - 1, d}, 0.0);
    for (int64_t r = 0; r < 2 * t_max - 1; ++r) {
        const double offset = static_cast<double>(r - (t_max - 1));
        for (int64_t c = 0; c < d; ++c) {
            const int64_t pair = c / 2;
            const double freq = std::pow(10000.0, -2.0 * static_cast<double>(pair) / static_cast<double>(d));
            table.at(r, c) = (c % 2 == 0) ? std::sin(offset * freq) : std::cos(offset * freq);
        }
    }
    return table;
}

Var feed_forward(Var x, const FeedForwardParams& p) {
    Var h = layer_norm(x, p.ln_gamma, p.ln_beta, kLayerNormEps);
    h = swish(linear(h, p.lin1));
    h = linear(h, p.lin2);
    return add(x, scale(h, 0.5));
}

Var attention(Var x, const AttentionParams& p) {
    const Tensor& xv = x.value();
    const int64_t steps = xv.rows();
    const int64_t d = xv.cols();
    const Tensor& table = p.rel_emb.value();
    const int64_t t_max = (table.rows() + 1) / 2;
    if (steps > t_max) {
        throw ShapeError("attention: sequence length " + std::to_string(steps) + " exceeds T_max " +
                         std::to_string(t_max));
    }
    if (table.cols() != d) {
        throw ShapeError("attention: relative table " + shape_str(table.shape()) + " does not match input " +
                         shape_str(xv.shape()));
    }
    if (p.heads < 1 || d % p.heads != 0) {
        throw ShapeError("attention: " + std::to_string(p.heads) + " heads do not divide d=" + std::to_string(d));
    }
    Tape& tape = *x.tape;
    Var h = layer_norm(x, p.ln_gamma, p.ln_beta, kLayerNormEps);
    Var q = linear(h, p.query);
    Var k = linear(h, p.key);
    Var v = linear(h, p.value);
    Var pq = linear(h, p.pos_query);

    // Offsets T−1 … −(T−1) in column order, so rel_shift lands offset i−j at (i, j).
    const int64_t width = 2 * steps - 1;
    Tensor window({width, d}, 0.0);
    for (int64_t c = 0; c < width; ++c) {
        const int64_t row = (c - (steps - 1)) + (t_max - 1);
        for (int64_t j = 0; j < d; ++j) window.at(c, j) = table.at(row, j);
    }
    Var rel = tape.constant(std::move(window));

    const int64_t dh = d / p.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> heads;
    heads.reserve(static_cast<size_t>(p.heads));
    for (int64_t hd = 0; hd < p.heads; ++hd) {
        const int64_t start = hd * dh;
        Var qh = slice_cols(q, start, dh);
        Var kh = slice_cols(k, start, dh);
        Var vh = slice_cols(v, start, dh);
        Var ph = slice_cols(pq, start, dh);
        Var rh = slice_cols(rel, start, dh);
        Var scores = add(matmul_nt(qh, kh), rel_shift(matmul_nt(ph, rh)));
        Var weights = softmax(scale(scores, inv_sqrt));
        heads.push_back(matmul(weights, vh));
    }
    Var context = p.heads == 1 ? heads.front() : concat_cols(heads);
    return add(x, linear(context, p.post));
}

Var conv_module(Var x, const ConvParams& p) {
    Var h = layer_norm(x, p.ln_gamma, p.ln_beta, kLayerNormEps);
    h = glu(linear(h, p.pre));
    h = depthwise_conv1d(h, p.depth_kernel);
    h = swish(layer_norm(h, p.norm_gamma, p.norm_beta, kLayerNormEps));
    return add(x, linear(h, p.post));
}

Var conformer_block(Var x, const BlockParams& p) {
    Var y = feed_forward(x, p.ff_start);
    y = attention(y, p.attn);
    y = conv_module(y, p.conv);
    y = feed_forward(y, p.ff_end);
    return layer_norm(y, p.final_ln_gamma, p.final_ln_beta, kLayerNormEps);
}

Var encoder_forward(Var features, const EncoderParams& p, ForwardStats* stats) {
    Var x = linear(features, p.frontend);
    for (const BlockParams& layer : p.layers) {
        x = conformer_block(x, layer);
        if (stats) ++stats->block_evaluations;
    }
    return linear(x, p.head);
}

}  // namespace confshare
