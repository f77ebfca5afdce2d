#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "confshare/training.hpp"

namespace confshare {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

/// Text manifest (version, seed, config, ordered keys with shapes) followed by
/// the values as little-endian 64-bit floats in manifest order.
void save_checkpoint(std::ostream& os, const Model& model);
void save_checkpoint(const std::string& path, const Model& model);

/// Rebinds the stored config and plan, then overwrites every tensor with the payload.
Model load_checkpoint(std::istream& is);
Model load_checkpoint(const std::string& path);

struct CheckpointSummary {
    int version = 0;
    uint64_t seed = 0;
    std::string config_text;
    std::vector<std::pair<std::string, Shape>> tensors;
    int64_t payload_bytes = 0;
};

/// Reads only the manifest.
CheckpointSummary read_checkpoint_manifest(std::istream& is);

}  // namespace confshare
