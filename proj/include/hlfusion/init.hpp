#pragma once

#include "hlfusion/rng.hpp"
#include "hlfusion/tensor.hpp"

namespace hlfusion {

/// Uniform on [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))].
/// For 3x3 convolutions the fans are 9*Cin and 9*Cout.
TensorPtr glorot_init(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace hlfusion
