#pragma once

#include <string>

#include "mcseg/models.hpp"

namespace mcseg {

// Checkpoint layout: magic "MCSEG1\n", a little-endian uint64 header length,
// a UTF-8 JSON header listing ordered parameter records {name, shape,
// dtype:"f32"} plus the architecture meta, then the concatenated raw
// little-endian float arrays in header order.
void save_checkpoint(const Model& model, const std::string& path);

// Validates magic, header and every parameter shape against the architecture
// named in the meta block.
Model load_checkpoint(const std::string& path);

}  // namespace mcseg
