#pragma once

#include <string>
#include <vector>

#include "lcco/nn.hpp"

namespace lcco {

/// Single-file archive of named weight tensors with a shape header plus a
/// JSON config snapshot (the LCKP container; layout documented in README).
void save_checkpoint(const std::string& path, const nn::ParamRegistry& reg,
                     const std::string& config_json);

struct CheckpointData {
    std::vector<std::string> names;
    std::vector<Tensor> tensors;
    std::string config_json;
};

CheckpointData read_checkpoint(const std::string& path);

/// Copies tensors into matching registry entries; every registry parameter
/// must be present with an identical shape.
void load_checkpoint_into(const CheckpointData& data, nn::ParamRegistry& reg);

}  // namespace lcco
