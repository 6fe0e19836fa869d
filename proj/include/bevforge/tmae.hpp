#pragma once

#include <cstdint>
#include <vector>

#include "bevforge/camera.hpp"
#include "bevforge/field.hpp"
#include "bevforge/ops.hpp"

namespace bevforge {

// Patch mask over a non-overlapping lattice tiling the full-resolution image.
struct MaskSpec {
  int patch_size = 28;
  double ratio = 0.75;
  std::uint64_t seed = 0;
  int patches_x = 0, patches_y = 0;
  std::vector<std::uint8_t> masked;  // patches_y * patches_x, 1 = masked

  bool is_masked_pixel(int y, int x) const {
    return masked[(y / patch_size) * patches_x + (x / patch_size)] != 0;
  }
  int masked_count() const;
};

// Masks exactly round(ratio * patch_count) uniformly random patches.
// Throws IndivisibleShape unless patch_size tiles the image.
MaskSpec generate_mask(MaskSpec spec, int image_height, int image_width);

// Encoder forward with mask propagation: masked pixels are zeroed before the
// first conv and features are re-zeroed after every stage at locations whose
// receptive-field center (input pixel (s*i, s*j) at cumulative stride s) lies
// in a masked patch. With no masked patches this equals encoder.encode().
Tensor masked_encode(const FeatureEncoder& encoder, const Tensor& image, const MaskSpec& mask);

// Camera-frame voxel lattice. Extents are chosen so cell pitches are exact
// binary fractions; cell (ix,iy,iz) center sits at min + (i+0.5)*pitch.
struct VoxelGridSpec {
  double x_min = -8, x_max = 8;
  double y_min = -2, y_max = 3;
  double z_min = 0.5, z_max = 20;
  int nx = 32, ny = 8, nz = 48;

  double pitch_x() const { return (x_max - x_min) / nx; }
  double pitch_y() const { return (y_max - y_min) / ny; }
  double pitch_z() const { return (z_max - z_min) / nz; }
  int cells() const { return nx * ny * nz; }
  Vec3 center(int ix, int iy, int iz) const {
    return {x_min + (ix + 0.5) * pitch_x(), y_min + (iy + 0.5) * pitch_y(),
            z_min + (iz + 0.5) * pitch_z()};
  }
  // Continuous cell coordinates of a camera-frame point (for trilinear_sample).
  Vec3 cell_coords(const Vec3& p) const {
    return {(p.x - x_min) / pitch_x() - 0.5, (p.y - y_min) / pitch_y() - 0.5,
            (p.z - z_min) / pitch_z() - 0.5};
  }
  bool contains(const Vec3& p) const {
    return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max && p.z >= z_min &&
           p.z <= z_max;
  }
};

struct VoxelGrid {
  VoxelGridSpec spec;
  int feature_dim = 0;
  Tensor features;  // [F×nx×ny×nz], density-gated after lift
  Tensor density;   // [1×nx×ny×nz]
  std::vector<std::uint8_t> mask_occupancy;  // nx*ny*nz
};

// Lifts 2D semantic features into the voxel lattice: every voxel center is
// projected through K, features are bilinearly sampled there (zero outside
// the frustum), density is evaluated from the geometric pathway at the voxel
// center, and features are gated by density. mask (nullable) sets
// mask_occupancy for voxels projecting into masked patches.
VoxelGrid lift_to_voxels(const Tensor& sem_feats, const FieldModel& field,
                         const Tensor& geo_feats, const CameraIntrinsics& K,
                         const VoxelGridSpec& spec, const MaskSpec* mask);

// Replaces features at masked voxels with token * density (gating preserved).
VoxelGrid densify(const VoxelGrid& grid, const Tensor& mask_token);

// Backward-warps the lattice: output voxel at center c holds the trilinear
// interpolation of the input grid at T⁻¹·c; zero outside. mask_occupancy is
// carried by nearest neighbor.
VoxelGrid warp_voxels(const VoxelGrid& grid, const Pose& t_0_to_i);

// Density-weighted ray marching of grid features along the rays (the same
// termination-weight machinery as composite_depth). Output is [F×Hf×Wf]
// where rays enumerate the feature lattice row-major.
Tensor collapse_to_fv(const VoxelGrid& grid, const RaySamples& rays, int feat_height,
                      int feat_width, AlphaFormula formula = AlphaFormula::kStandard);

// Per-pixel reconstruction MLP: collapsed feature -> RGB.
struct ReconHead {
  Tensor w1, b1, w2, b2;
  static ReconHead create(int feature_dim, int hidden, Rng& rng);
  Tensor apply(const Tensor& fv_feats) const;  // [F×H×W] -> [3×H×W]
  std::vector<Tensor> params();
};

// True for feature-lattice patches whose rays have at least one sample that
// lies inside the lattice, maps back into the source grid under T⁻¹, and
// projects into the source camera — i.e. the patch actually sees warped
// content. Patch granularity: >= half of its pixels must qualify.
std::vector<std::uint8_t> footprint_valid_patches(const VoxelGridSpec& spec,
                                                  const Pose& t_0_to_i, const RaySamples& rays,
                                                  const CameraIntrinsics& K, int feat_height,
                                                  int feat_width, int feat_patch);

struct ReconTarget {
  Tensor predicted;                        // [3×Hf×Wf], on the tape
  std::vector<double> reference;           // 3*Hf*Wf planar (downsampled image)
  std::vector<std::uint8_t> patch_valid;   // patch lattice, 1 = supervised
};

// Sum over timesteps of the per-patch mean squared error against per-patch
// normalized references (std floor 1e-6). Timestep 0 is restricted to masked
// patches; later timesteps cover every footprint-valid patch.
Tensor reconstruction_loss(const std::vector<ReconTarget>& targets, const MaskSpec& mask,
                           int window_n, int feat_patch);

}  // namespace bevforge
