#pragma once

#include <map>
#include <string>

#include "confshare/accountant.hpp"
#include "confshare/conformer.hpp"
#include "confshare/reference.hpp"
#include "confshare/sharing.hpp"
#include "test_util.hpp"

namespace testutil {

inline ModelConfig tiny_config(int64_t d, int64_t heads, int64_t kernel = 3, double e = 2.0) {
    ModelConfig c;
    c.d = d;
    c.heads = heads;
    c.kernel = kernel;
    c.ff_expansion = e;
    c.input_dim = 80;
    c.num_classes = 8;
    c.t_max = 16;
    c.external_params = 0;
    return c;
}

/// Model of the toy training runs: two physical blocks, three repeats each.
inline ModelConfig toy_training_config() {
    ModelConfig c = tiny_config(32, 4, 7, 4.0);
    c.t_max = 64;
    return c;
}
inline SharingPlan toy_training_plan() { return repeat_plan(2, 3); }
inline constexpr uint64_t kToySeed = 7;
inline constexpr int64_t kToySteps = 200;

/// Overwrites every tensor with draws that keep norms near one and biases nonzero,
/// so that no parameter sits at a structurally special value.
inline void randomize(ParameterStore& store, uint64_t seed) {
    Rng rng(seed);
    for (auto& [key, t] : store.tensors()) {
        const bool gain = key.tensor.find("gamma") != std::string::npos;
        for (double& v : t.storage()) v = gain ? rng.uniform(0.7, 1.3) : rng.uniform(-0.5, 0.5);
    }
}

/// A single-layer binding plus the tape-side parameters resolved from it.
struct BlockFixture {
    ModelConfig config;
    Binding binding;

    BlockFixture(ModelConfig c, uint64_t seed) : config(c), binding(bind_parameters(c, repeat_plan(1, 1), seed)) {
        randomize(binding.store, seed + 100);
    }

    const LayerBinding& layer() const { return binding.schedule.layers.front(); }

    EncoderParams params(Tape& tape, bool requires_grad = true) const {
        leaves = make_leaves(tape, binding.store, requires_grad);
        return materialize(tape, config, binding.store, binding.schedule, leaves);
    }

    mutable LeafMap leaves;
};

inline Var apply_module(ModuleKind m, Var x, const BlockParams& p) {
    switch (m) {
        case ModuleKind::FFStart: return feed_forward(x, p.ff_start);
        case ModuleKind::Attention: return attention(x, p.attn);
        case ModuleKind::Conv: return conv_module(x, p.conv);
        case ModuleKind::FFEnd: return feed_forward(x, p.ff_end);
    }
    return x;
}

/// Gradcheck of one module (or the whole block when `module` is empty) with
/// loss = Σ out ⊙ W for fixed random W. Backward runs on the tape; the
/// finite differences (central, 4th order, eps 1e-4) use the long double
/// reference evaluator. Returns the worst relative error over every
/// coordinate of every tensor of the block.
inline double block_gradcheck(const BlockFixture& fx, std::optional<ModuleKind> module, int64_t steps,
                              uint64_t seed) {
    Rng rng(seed);
    const Tensor x = random_tensor({steps, fx.config.d}, rng);
    const Tensor w = random_tensor({steps, fx.config.d}, rng);

    Tape tape;
    const EncoderParams p = fx.params(tape);
    Var in = tape.constant(x);
    Var out = module ? apply_module(*module, in, p.layers.front()) : conformer_block(in, p.layers.front());
    auto grads = tape.backward(sum(mul(out, tape.constant(w))));

    ParameterStore probe = fx.binding.store;
    double worst = 0.0;
    for (auto& [key, t] : probe.tensors()) {
        if (key.section == Section::Frontend || key.section == Section::Head) continue;
        auto f = [&](std::span<const double> theta) {
            std::copy(theta.begin(), theta.end(), t.storage().begin());
            const auto y = module ? reference_module<long double>(*module, fx.config, probe, fx.layer(), x)
                                  : reference_block<long double>(fx.config, probe, fx.layer(), x);
            long double s = 0;
            for (size_t i = 0; i < y.size(); ++i) s += y[i] * w[static_cast<int64_t>(i)];
            return s;
        };
        const std::vector<double> theta(t.data().begin(), t.data().end());
        const auto numeric = finite_diff_grad(f, theta, 1e-4, FiniteDiffScheme::central4);
        std::copy(theta.begin(), theta.end(), t.storage().begin());
        auto g = grads.find(key.str());
        for (size_t i = 0; i < numeric.size(); ++i) {
            const double analytic = g == grads.end() ? 0.0 : g->second[static_cast<int64_t>(i)];
            worst = std::max(worst, relative_error(analytic, numeric[i]));
        }
    }
    return worst;
}

}  // namespace testutil
