#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fga/tensor.hpp"

namespace fga {

// Tensor container file, little-endian throughout:
//   magic "FGAK" | version u32 (=1) | count u32
//   per tensor: name_len u32 | name bytes | dtype u8 (0=f32, 1=f64) |
//               rank u8 | dims u64 each | raw payload
// Entry order is preserved; names must be unique.
inline constexpr std::uint32_t kTensorFileVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_tensor_file(const std::string& path, const NamedTensors& tensors);

// Reads any dtype; payloads are converted to the build's scalar type.
NamedTensors read_tensor_file(const std::string& path);

const Tensor& find_tensor(const NamedTensors& tensors, const std::string& name);

}  // namespace fga
