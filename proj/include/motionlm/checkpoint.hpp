// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "motionlm/tensor.hpp"

namespace motionlm {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Flat checkpoint: magic "MLMC", u32 version, u32 entry count, then per
// entry (u32 name length, name bytes, u32 rank, u32 dims..., f64 values),
// all little-endian.
void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);

// Writes loaded values into same-named tensors; throws on missing names or
// shape mismatches.
void restore_into(const NamedTensors& loaded, NamedTensors& live);

// SHA-1 digest of a byte string / file, as lowercase hex.
std::string sha1_hex(const std::string& bytes);
std::string sha1_file(const std::string& path);

}  // namespace motionlm
