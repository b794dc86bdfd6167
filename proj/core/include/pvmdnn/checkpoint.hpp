#pragma once

// Checkpoint container: magic "PVMD", format version u16, a manifest (the
// network config plus per-tensor name/tau/shape entries), then little-endian
// IEEE-754 float32 blobs in manifest order.

#include <string>

#include "pvmdnn/network.hpp"

namespace pvmdnn {

struct Checkpoint {
  NetworkConfig config;
  Parameters params;
};

void save_checkpoint(const std::string& path, const NetworkConfig& cfg, const Parameters& p);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pvmdnn
