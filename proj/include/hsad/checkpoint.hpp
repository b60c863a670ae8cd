#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hsad/tensor.hpp"

namespace hsad {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Flat binary tensor container, all integers little-endian:
///
///   magic    8 bytes  "HSADTNSR"
///   version  u32      1
///   count    u32
///   count times:
///     name_len u32, name bytes (UTF-8, no terminator)
///     dtype    u8     0 = float32, 1 = float64
///     rank     u32
///     dims     rank x u64
///     payload  product(dims) IEEE-754 values, little-endian
///
/// Used for model checkpoints and for materialised datasets.
inline constexpr char kContainerMagic[8] = {'H', 'S', 'A', 'D', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kContainerVersion = 1;

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

/// Byte image of a container, as written by save_tensors.
std::string encode_tensors(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_tensors(const std::string& bytes);

const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

}  // namespace hsad
