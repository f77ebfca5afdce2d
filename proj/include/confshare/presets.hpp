#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "confshare/model_config.hpp"
#include "confshare/sharing.hpp"

namespace confshare {

class UnknownPreset : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Preset {
    std::string name;
    ModelConfig config;
    SharingPlan plan;
    std::string provenance;
    std::optional<double> reported_size;  // reported total, in parameters
    bool dim_reported = false;       // false: d comes from the calibrated template
};

/// Base names in table order: B0, B1, SL0–SL6, SM0–SM4, SC0–SC10, LR0–LR3, LRS0–LRS3.
const std::vector<std::string>& preset_names();

/// Resolves a base name or its "-small" variant (d = 16, 2 heads, rank scaled with d,
/// no external parameters). Throws UnknownPreset listing valid names.
Preset preset(std::string_view name);

/// Every base preset followed by every "-small" variant.
std::vector<Preset> all_presets();

/// Rank used by the "-small" variant of a preset with rank k at d = 144.
int64_t small_rank(int64_t k);

inline constexpr int64_t kSmallDim = 16;
inline constexpr int64_t kSmallHeads = 2;

}  // namespace confshare
