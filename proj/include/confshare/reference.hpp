#pragma once

#include <vector>

#include "confshare/training.hpp"

namespace confshare {

/// Value-only evaluation of the encoder in scalar type S, written without the
/// tape. Serves as the finite-difference oracle (in long double) and as a
/// second forward implementation to check the taped one against.
/// Instantiated for double and long double.
template <class S>
std::vector<S> reference_logits(const ModelConfig& config, const ParameterStore& store, const BoundSchedule& schedule,
                                const Tensor& features);

/// One module (residual included) or one whole block applied to x (T×d), with
/// weights looked up through one virtual layer's binding. Row-major output.
template <class S>
std::vector<S> reference_module(ModuleKind module, const ModelConfig& config, const ParameterStore& store,
                                const LayerBinding& layer, const Tensor& x);
template <class S>
std::vector<S> reference_block(const ModelConfig& config, const ParameterStore& store, const LayerBinding& layer,
                               const Tensor& x);

/// Same objective as batch_loss.
template <class S>
S reference_batch_loss(const ModelConfig& config, const ParameterStore& store, const BoundSchedule& schedule,
                       const ToyBatch& batch);

}  // namespace confshare
