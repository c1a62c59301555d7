#pragma once

#include "xvpr/tensor.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace xvpr {

using Digest = std::array<unsigned char, 32>;

Digest sha256(std::span<const unsigned char> bytes);
Digest sha256_file(const std::string& path);
std::string digest_hex(const Digest& d);

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Flat binary container of named tensors:
///   magic "XVPR", version byte, u64 count, then per entry
///   (u64 name length, name bytes, u64 rank, u64 dims..., f64 values...),
/// all integers and doubles little-endian.
void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

/// Lookup by exact name; throws DataError when absent.
const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

}  // namespace xvpr
