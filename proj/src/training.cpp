#include "confshare/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "confshare/config_io.hpp"
#include "confshare/gradcheck.hpp"
#include "confshare/reference.hpp"
#include "confshare/rng.hpp"

namespace confshare {

Tensor toy_prototypes(const ToyTaskSpec& spec, uint64_t seed) {
    Tensor protos({spec.num_classes, spec.feature_dim}, 0.0);
    Rng rng = Rng(seed).fork("toy/prototypes");
    for (double& v : protos.storage()) v = rng.uniform(-1.0, 1.0);
    return protos;
}

ToyBatch generate_toy_batch(const ToyTaskSpec& spec, uint64_t seed, uint64_t batch_index) {
    if (spec.num_classes < 1 || spec.frames < 1 || spec.batch < 1 || spec.feature_dim < 1) {
        throw std::invalid_argument("toy task extents must be positive");
    }
    const Tensor protos = toy_prototypes(spec, seed);
    Rng rng = Rng(seed).fork("toy/batch/" + std::to_string(batch_index));
    const double amplitude = 0.3 * spec.noise_scale;
    ToyBatch b{Tensor({spec.batch, spec.frames, spec.feature_dim}, 0.0), {}};
    b.labels.reserve(static_cast<size_t>(spec.batch * spec.frames));
    for (int64_t u = 0; u < spec.batch; ++u) {
        for (int64_t t = 0; t < spec.frames; ++t) {
            const int label = static_cast<int>(rng.below(static_cast<uint64_t>(spec.num_classes)));
            b.labels.push_back(label);
            double* row = b.features.data().data() + (u * spec.frames + t) * spec.feature_dim;
            for (int64_t f = 0; f < spec.feature_dim; ++f) {
                const double noise = amplitude == 0.0 ? 0.0 : rng.uniform(-amplitude, amplitude);
                row[f] = protos.at(label, f) + noise;
            }
        }
    }
    return b;
}

Model build_model(const ModelConfig& config, const SharingPlan& plan, uint64_t seed) {
    Binding b = bind_parameters(config, plan, seed);
    return Model{config, plan, seed, std::move(b.store), std::move(b.schedule)};
}

namespace {

Var utterance(Tape& tape, const ToyBatch& batch, int64_t u) {
    const int64_t frames = batch.features.dim(1);
    const int64_t feat = batch.features.dim(2);
    const double* start = batch.features.data().data() + u * frames * feat;
    return tape.constant(Tensor({frames, feat}, std::vector<double>(start, start + frames * feat)));
}

Var batch_objective(Tape& tape, const ModelConfig& config, const ParameterStore& store, const BoundSchedule& schedule,
                    const ToyBatch& batch, bool requires_grad, ForwardStats* stats) {
    const LeafMap leaves = make_leaves(tape, store, requires_grad);
    const EncoderParams params = materialize(tape, config, store, schedule, leaves);
    const int64_t utterances = batch.features.dim(0);
    const int64_t frames = batch.features.dim(1);
    if (batch.features.dim(2) != config.input_dim) {
        throw ShapeError("batch feature dim " + std::to_string(batch.features.dim(2)) + " does not match model input " +
                         std::to_string(config.input_dim));
    }
    std::vector<Var> losses;
    for (int64_t u = 0; u < utterances; ++u) {
        Var logits = encoder_forward(utterance(tape, batch, u), params, stats);
        std::span<const int> labels(batch.labels.data() + u * frames, static_cast<size_t>(frames));
        losses.push_back(cross_entropy(logits, labels));
    }
    Var total = losses.front();
    for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
    return scale(total, 1.0 / static_cast<double>(utterances));
}

}  // namespace

double batch_loss(const ModelConfig& config, const ParameterStore& store, const BoundSchedule& schedule,
                  const ToyBatch& batch, ForwardStats* stats) {
    Tape tape;
    return batch_objective(tape, config, store, schedule, batch, false, stats).value()[0];
}

LossResult loss_and_grads(const Model& model, const ToyBatch& batch) {
    Tape tape;
    LossResult r;
    Var loss = batch_objective(tape, model.config, model.store, model.schedule, batch, true, &r.stats);
    r.loss = loss.value()[0];
    r.grads = tape.backward(loss);
    return r;
}

void OptimizerState::apply(ParameterStore& store, const std::map<std::string, Tensor>& grads) {
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (auto& [key, param] : store.tensors()) {
        auto g = grads.find(key.str());
        if (g == grads.end()) continue;
        auto [m_it, m_new] = first_moment.try_emplace(key, param.shape(), 0.0);
        auto [v_it, v_new] = second_moment.try_emplace(key, param.shape(), 0.0);
        Tensor& m = m_it->second;
        Tensor& v = v_it->second;
        const Tensor& gr = g->second;
        for (int64_t i = 0; i < param.numel(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * gr[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * gr[i] * gr[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

TrainingDiverged::TrainingDiverged(int64_t step, const std::string& what)
    : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

TrainReport train_steps(Model& model, const ToyTaskSpec& spec, OptimizerState& opt, int64_t steps, uint64_t seed) {
    if (model.config.num_classes != spec.num_classes) {
        throw std::invalid_argument("model has " + std::to_string(model.config.num_classes) + " output classes but the task has " +
                                    std::to_string(spec.num_classes));
    }
    if (model.config.input_dim != spec.feature_dim) {
        throw std::invalid_argument("model input dim does not match task feature dim");
    }
    const auto start = std::chrono::steady_clock::now();
    TrainReport report;
    report.seed = seed;
    report.digest = config_digest(model.config, model.plan);
    for (int64_t s = 0; s < steps; ++s) {
        const ToyBatch batch = generate_toy_batch(spec, seed, static_cast<uint64_t>(s));
        LossResult r;
        try {
            r = loss_and_grads(model, batch);
        } catch (const NonFiniteError& e) {
            throw TrainingDiverged(s, e.what());
        }
        if (!std::isfinite(r.loss)) throw TrainingDiverged(s, "non-finite loss");
        report.losses.push_back(r.loss);
        opt.apply(model.store, r.grads);
    }
    if (!report.losses.empty()) {
        report.initial_loss = report.losses.front();
        report.final_loss = report.losses.back();
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

std::string serialize_train_report(const TrainReport& r) {
    std::ostringstream os;
    char buf[64];
    os << "# confshare train report v1\n";
    os << "# seed " << r.seed << '\n';
    os << "# digest " << r.digest << '\n';
    os << "# steps " << r.losses.size() << '\n';
    std::snprintf(buf, sizeof buf, "%.17g", r.initial_loss);
    os << "# initial_loss " << buf << '\n';
    std::snprintf(buf, sizeof buf, "%.17g", r.final_loss);
    os << "# final_loss " << buf << '\n';
    for (size_t i = 0; i < r.losses.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", r.losses[i]);
        os << i << '\t' << buf << '\n';
    }
    return os.str();
}

GradcheckReport gradcheck_model(const Model& model, const ToyBatch& batch, const GradcheckOptions& opts,
                                const std::optional<std::vector<ParamKey>>& keys) {
    GradcheckReport report;
    std::vector<ParamKey> targets;
    if (keys) {
        targets = *keys;
    } else {
        for (const auto& [key, t] : model.store.tensors()) targets.push_back(key);
    }
    if (targets.empty()) return report;

    const LossResult analytic = loss_and_grads(model, batch);
    ParameterStore probe = model.store;

    for (const ParamKey& key : targets) {
        Tensor& param = probe.at(key);
        const Tensor& grad = analytic.grads.at(key.str());
        std::vector<int64_t> coords;
        if (param.numel() <= opts.samples_per_tensor) {
            for (int64_t i = 0; i < param.numel(); ++i) coords.push_back(i);
        } else {
            Rng rng = Rng(opts.seed).fork("gradcheck/" + key.str());
            std::set<int64_t> picked;
            while (static_cast<int64_t>(picked.size()) < opts.samples_per_tensor) {
                picked.insert(static_cast<int64_t>(rng.below(static_cast<uint64_t>(param.numel()))));
            }
            coords.assign(picked.begin(), picked.end());
        }
        std::vector<double> theta;
        for (int64_t c : coords) theta.push_back(param[c]);
        auto f = [&](std::span<const double> values) {
            for (size_t i = 0; i < coords.size(); ++i) param[coords[i]] = values[i];
            return reference_batch_loss<long double>(model.config, probe, model.schedule, batch);
        };
        const std::vector<double> numeric = finite_diff_grad(f, theta, opts.eps, opts.scheme);
        for (size_t i = 0; i < coords.size(); ++i) param[coords[i]] = theta[i];

        TensorCheck check{key.str(), static_cast<int64_t>(coords.size()), 0.0, true};
        for (size_t i = 0; i < coords.size(); ++i) {
            check.max_rel_error = std::max(check.max_rel_error, relative_error(grad[coords[i]], numeric[i]));
        }
        check.passed = check.max_rel_error < opts.tol;
        report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
        report.passed = report.passed && check.passed;
        report.tensors.push_back(std::move(check));
    }
    return report;
}

}  // namespace confshare
