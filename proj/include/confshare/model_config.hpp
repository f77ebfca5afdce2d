#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace confshare {

/// Architecture hyperparameters shared by every block of a model.
struct ModelConfig {
    int64_t d = 144;              // model dimension
    double ff_expansion = 7.25;   // feed-forward hidden width is ceil(ff_expansion * d)
    int64_t heads = 4;
    int64_t kernel = 13;          // depthwise kernel width, odd
    int64_t input_dim = 80;
    int64_t num_classes = 8;
    int64_t t_max = 256;          // longest sequence attention accepts
    int64_t external_params = 0;  // decoder parameters outside the encoder, counted only in totals

    int64_t ff_hidden() const;
    int64_t head_dim() const { return d / heads; }

    /// Empty when the config is usable.
    std::vector<std::string> violations() const;
    /// Throws std::invalid_argument listing every violation.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

}  // namespace confshare
