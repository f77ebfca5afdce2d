#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "confshare/model_config.hpp"
#include "confshare/sharing.hpp"

namespace confshare {

/// Malformed config text. The message carries the 1-based line number.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ConfigFile {
    ModelConfig config;
    SharingPlan plan;
};

/// Parses the line-oriented `section.key = value` grammar; see docs/config-format.md.
/// Model keys left out take their values from baseline_template(). The plan is
/// returned as written (not validated) so that validation can report violations.
ConfigFile parse_config(std::string_view text);
ConfigFile load_config_file(const std::string& path);

/// Canonical text form: every model key, then V, the four index vectors, overrides, and rank.
std::string serialize_config(const ModelConfig& config, const SharingPlan& plan);

/// 16 lowercase hex digits of FNV-1a over serialize_config().
std::string config_digest(const ModelConfig& config, const SharingPlan& plan);

}  // namespace confshare
