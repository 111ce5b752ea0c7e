#pragma once

#include <string>
#include <utility>
#include <vector>

#include "caplab/tensor.hpp"

namespace caplab {

// Checkpoint file: magic "CAPLAB01", version u32, then one record per tensor
// (u64 name length, UTF-8 name, u64 rank, u64 dims, raw f32 payload), records
// until end of file. All integers and floats little-endian.

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);

// Every tensor in the file, in file order.
std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

// Copy file tensors into the given parameters by name. Only parameters whose
// name starts with `prefix` participate; each of those must be present in the
// file with an identical shape, otherwise the error names the tensor and both
// shapes. Extra file tensors outside the filter are ignored.
void load_into(const std::string& path, std::vector<std::pair<std::string, Tensor>>& params,
               const std::string& prefix = "");

}  // namespace caplab
