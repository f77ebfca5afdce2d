#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "confshare/conformer.hpp"
#include "confshare/gradcheck.hpp"
#include "confshare/sharing.hpp"

namespace confshare {

/// Synthetic framewise classification task shaped like 80-dim filterbank input.
struct ToyTaskSpec {
    int64_t feature_dim = 80;
    int64_t num_classes = 8;
    int64_t frames = 32;
    int64_t batch = 4;
    /// Noise amplitude relative to the prototype scale; frames carry noise in ±0.3·noise_scale.
    double noise_scale = 1.0;
};

struct ToyBatch {
    Tensor features;          // batch × frames × feature_dim
    std::vector<int> labels;  // batch · frames, row-major
};

/// K prototype rows, uniform in [−1, 1], derived from the seed.
Tensor toy_prototypes(const ToyTaskSpec& spec, uint64_t seed);

/// Each frame is a uniformly drawn prototype plus uniform noise; its label is the prototype index.
/// Pure function of (spec, seed, batch_index).
ToyBatch generate_toy_batch(const ToyTaskSpec& spec, uint64_t seed, uint64_t batch_index);

/// A bound model: configuration, plan, physical weights, and virtual-layer schedule.
struct Model {
    ModelConfig config;
    SharingPlan plan;
    uint64_t seed = 0;
    ParameterStore store;
    BoundSchedule schedule;
};

Model build_model(const ModelConfig& config, const SharingPlan& plan, uint64_t seed);

struct LossResult {
    double loss = 0.0;
    std::map<std::string, Tensor> grads;  // by ParamKey::str()
    ForwardStats stats;
};

/// Mean over utterances of the mean framewise cross-entropy.
double batch_loss(const ModelConfig& config, const ParameterStore& store, const BoundSchedule& schedule,
                  const ToyBatch& batch, ForwardStats* stats = nullptr);
LossResult loss_and_grads(const Model& model, const ToyBatch& batch);

/// Adam with bias correction.
struct OptimizerState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;
    std::map<ParamKey, Tensor> first_moment;
    std::map<ParamKey, Tensor> second_moment;

    void apply(ParameterStore& store, const std::map<std::string, Tensor>& grads);
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(int64_t step, const std::string& what);
    int64_t step() const { return step_; }

private:
    int64_t step_;
};

struct TrainReport {
    std::vector<double> losses;  // loss of step s before its update
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double wall_seconds = 0.0;   // not serialized
    uint64_t seed = 0;
    std::string digest;          // 16 hex digits over the canonical config + plan text
};

/// Runs `steps` Adam updates on batches generate_toy_batch(spec, seed, s).
TrainReport train_steps(Model& model, const ToyTaskSpec& spec, OptimizerState& opt, int64_t steps, uint64_t seed);

/// Header lines starting with '#', then "step<TAB>loss" rows with 17 significant digits.
std::string serialize_train_report(const TrainReport& report);

struct GradcheckOptions {
    double eps = 1e-4;
    double tol = 1e-5;
    int64_t samples_per_tensor = 8;
    uint64_t seed = 0;
    FiniteDiffScheme scheme = FiniteDiffScheme::central4;
};

struct TensorCheck {
    std::string key;
    int64_t coordinates = 0;
    double max_rel_error = 0.0;
    bool passed = true;
};

struct GradcheckReport {
    std::vector<TensorCheck> tensors;
    double max_rel_error = 0.0;
    bool passed = true;
};

/// Compares backward gradients with central differences on a seeded coordinate
/// subset of every physical tensor (or only `keys` when given).
GradcheckReport gradcheck_model(const Model& model, const ToyBatch& batch, const GradcheckOptions& opts,
                                const std::optional<std::vector<ParamKey>>& keys = std::nullopt);

}  // namespace confshare
