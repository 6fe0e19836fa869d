#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bevforge/tensor.hpp"

namespace bevforge {

// Binary snapshot of every parameter plus optimizer and RNG state. The layout
// is fixed little-endian; save -> load -> save is byte-identical.
struct Checkpoint {
  static constexpr char kMagic[5] = {'B', 'V', 'F', 'G', '1'};
  static constexpr std::uint32_t kVersion = 1;

  std::string config_json;
  std::vector<std::pair<std::string, Tensor>> params;  // creation order
  std::vector<std::vector<double>> velocities;         // aligned with params
  std::string rng_state;
  std::uint32_t epoch = 0;
  std::uint64_t step = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
// Throws IoError on missing file, magic mismatch, or version mismatch.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace bevforge
