#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "emosde/tensor.hpp"

namespace emosde {

// On-disk model container:
//   bytes 0..7   magic "EMSDNET1"
//   u32 LE       header length H
//   H bytes      JSON header {kind, meta, tensor index with shapes/offsets}
//   payload      raw little-endian float32 data, tensors in index order
struct Checkpoint {
    std::string kind;     // "acoustic" | "classifier"
    nlohmann::json meta;  // arch, schedule, config_hash, train_step, ...
    std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace emosde
