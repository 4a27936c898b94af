#pragma once

#include <string>

#include "hlfusion/model.hpp"

namespace hlfusion {

/// Flat binary container: 8-byte magic, u32 version, serialized config, then
/// every parameter as {name, shape, raw little-endian f64 values} in
/// named_parameters() order. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const FusionModel& model);
FusionModel load_checkpoint(const std::string& path);

}  // namespace hlfusion
