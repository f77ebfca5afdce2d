#include "confshare/model_config.hpp"

#include <cmath>
#include <stdexcept>

namespace confshare {

int64_t ModelConfig::ff_hidden() const {
    // The tolerance keeps exactly representable products such as 7.25 * 144 from rounding up.
    return static_cast<int64_t>(std::ceil(ff_expansion * static_cast<double>(d) - 1e-9));
}

std::vector<std::string> ModelConfig::violations() const {
    std::vector<std::string> out;
    if (d < 1) out.push_back("model.d must be positive");
    if (!(ff_expansion > 0.0) || !std::isfinite(ff_expansion)) out.push_back("model.ff_expansion must be positive");
    if (heads < 1) out.push_back("model.heads must be positive");
    else if (d >= 1 && d % heads != 0) {
        out.push_back("model.heads (" + std::to_string(heads) + ") must divide model.d (" + std::to_string(d) + ")");
    }
    if (kernel < 1 || kernel % 2 == 0) out.push_back("model.kernel must be a positive odd width");
    if (input_dim < 1) out.push_back("model.input_dim must be positive");
    if (num_classes < 1) out.push_back("model.num_classes must be positive");
    if (t_max < 1) out.push_back("model.t_max must be positive");
    if (external_params < 0) out.push_back("model.external_params must be non-negative");
    return out;
}

void ModelConfig::validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid model config:";
    for (const auto& s : v) msg += "\n  " + s;
    throw std::invalid_argument(msg);
}

}  // namespace confshare
