#pragma once

#include <cstdint>
#include <vector>

#include "bevforge/camera.hpp"
#include "bevforge/ops.hpp"

namespace bevforge {

// One source/target image pair under a known relative pose (src -> tgt).
// Images are [3×H×W] values in [0,1]; they are data, not parameters.
struct ViewPair {
  Tensor src_image;
  Tensor tgt_image;
  Pose relative_pose;
  CameraIntrinsics intrinsics;
};

struct WarpResult {
  Tensor warped;                      // [3×H×W]; exactly 0 at invalid pixels
  std::vector<std::uint8_t> validity; // H*W
};

// Per-pixel reprojection of the source grid into the target image and
// bilinear sampling there. Differentiable w.r.t. depth_src. Pixels are
// invalid when their depth is <= 0, the reprojected point is closer than
// z_near, or it falls outside the target bounds.
WarpResult inverse_warp(const ViewPair& pair, const Tensor& depth_src);

// Z-buffered splatting of source pixels onto rounded target coordinates;
// smaller warped depth wins, ties keep the first writer in row-major source
// order. Purely a rearrangement of source values: gradients do not flow
// through splat positions, so the result is constant w.r.t. depth.
WarpResult forward_warp(const ViewPair& pair, const Tensor& depth_src);

// Combined loss over one or more target views: per-pixel L1 residuals
// (summed over channels) per view for both warp directions, per-pixel
// minimum across views per branch, mean over pixels valid in at least one
// view; the two branch means are added. Throws EmptyValidSet when neither
// branch has any valid pixel.
Tensor photometric_loss(const std::vector<ViewPair>& targets, const Tensor& depth_src);

}  // namespace bevforge
