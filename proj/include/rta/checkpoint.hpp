#pragma once

#include <string>

#include "rta/model.hpp"

namespace rta {

// Checkpoint layout: <dir>/manifest.txt (config, role, and per-tensor
// name/shape/byte-offset lines) plus <dir>/payload.bin, a flat
// little-endian 64-bit-float payload.
void save_checkpoint(const std::string& dir, const ModelParams& params);
ModelParams load_checkpoint(const std::string& dir);

// FNV-1a of a file's bytes, hex-encoded; used in run manifests.
std::string file_checksum(const std::string& path);

}  // namespace rta
