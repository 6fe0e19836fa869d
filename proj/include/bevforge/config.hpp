#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bevforge/bev.hpp"
#include "bevforge/tmae.hpp"

namespace bevforge {

enum class Pathways { kBoth, kGeometric, kSemantic };

// Training/runtime configuration. JSON round-trips strictly: unknown keys are
// rejected at every nesting level.
struct Config {
  std::uint64_t seed = 1;
  int epochs = 20;
  double lr = 0.005;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<double> lr_decay_at = {0.75, 0.9};      // fractions of total epochs
  std::vector<double> lr_decay_factor = {0.5, 0.2};   // multiplied in as reached
  int window = 4;           // frames per training sample (t0 plus window-1 future)
  double mask_ratio = 0.75;
  int patch_size = 28;      // full-resolution pixels; must divide image dims
  double label_fraction = 1.0;
  std::string alpha_formula = "standard";
  std::string pathways = "both";  // both | geometric | semantic
  int holdout_frames = 0;   // trailing frames per scene excluded from training
  int holdout_frame = -1;   // interior frame index excluded from every window
  bool use_spatial_camera = false;

  int k = 32;
  double d_min = 0.5, d_max = 40.0;
  bool jitter = true;

  int pe_bands = 6;
  int field_hidden = 32;
  std::array<int, 3> enc_channels = {12, 24, 24};
  int recon_hidden = 32;
  int bev_hidden = 32;
  int num_classes = kNumClasses;

  VoxelGridSpec grid;
  BevGridSpec bev;

  void validate() const;  // throws ConfigError
  Pathways pathway_mode() const;

  std::string to_json_string() const;
  static Config from_json_string(const std::string& text);
  static Config load(const std::string& path);  // IoError / ConfigError
  void save(const std::string& path) const;

  // Desk-scale preset: patch size 24 tiles the 96x288 synthetic images.
  static Config desk();
};

}  // namespace bevforge
