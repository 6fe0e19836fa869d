#pragma once

#include <cstdint>
#include <vector>

#include "bevforge/tmae.hpp"

namespace bevforge {

// Synthetic semantic classes shared by the renderer, BEV labels and heads.
enum SemClass : std::uint8_t {
  kClassRoad = 0,
  kClassTerrain = 1,
  kClassBuilding = 2,
  kClassCar = 3,
  kClassVoid = 4,
};
inline constexpr int kNumClasses = 5;
inline constexpr std::uint8_t kIgnoreIndex = 255;

// Top-down lattice over the voxel-grid footprint: x lateral, z forward.
struct BevGridSpec {
  double x_min = -8, x_max = 8;
  double z_min = 0.5, z_max = 20;
  int nx = 32, nz = 48;

  double pitch_x() const { return (x_max - x_min) / nx; }
  double pitch_z() const { return (z_max - z_min) / nz; }
  double cell_x(int ix) const { return x_min + (ix + 0.5) * pitch_x(); }
  double cell_z(int iz) const { return z_min + (iz + 0.5) * pitch_z(); }
};

struct BevMap {
  int nx = 0, nz = 0;
  int num_classes = kNumClasses;
  std::vector<std::uint8_t> classes;  // nx*nz entries in {0..C-1} ∪ {255}

  std::uint8_t at(int ix, int iz) const { return classes[static_cast<std::size_t>(ix) * nz + iz]; }
};

// Density-weighted mean over the height axis:
// out(x,z) = sum_y f*sigma / (sum_y sigma + eps).
Tensor collapse_to_bev(const VoxelGrid& grid);

// Two-layer conv head over the collapsed (x,z) lattice.
struct BevHead {
  Tensor w1, b1, w2, b2;
  static BevHead create(int feature_dim, int hidden, int num_classes, Rng& rng);
  Tensor apply(const Tensor& bev_feats) const;  // [F×nx×nz] -> [C×nx×nz]
  std::vector<Tensor> params();
};

// Mean negative log-softmax of the true class over non-ignored cells.
// Throws AllIgnored when every cell is 255.
Tensor bev_cross_entropy(const Tensor& logits, const BevMap& gt);

struct IouResult {
  std::vector<double> per_class;  // -1 marks classes absent from pred and gt
  double mean = 0.0;
};

// IoU per class over non-ignored cells; classes absent from both prediction
// and ground truth are excluded from the mean.
IouResult miou(const BevMap& pred, const BevMap& gt, int num_classes);

// Confusion-matrix accumulation form used by evaluate (and by the unit
// oracle): row = gt class, col = pred class, ignored cells skipped.
void accumulate_confusion(const BevMap& pred, const BevMap& gt, int num_classes,
                          std::vector<std::int64_t>& confusion);
IouResult iou_from_confusion(const std::vector<std::int64_t>& confusion, int num_classes);

}  // namespace bevforge
