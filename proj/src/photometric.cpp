#include "bevforge/photometric.hpp"

#include <cmath>

namespace bevforge {
namespace {

constexpr double kInvalidResidual = 1e6;  // sentinel before the cross-view min

void check_pair(const ViewPair& pair, const Tensor& depth) {
  if (pair.src_image.rank() != 3 || pair.tgt_image.rank() != 3 ||
      pair.src_image.shape() != pair.tgt_image.shape())
    throw ShapeMismatch("view pair: images must both be [3×H×W]");
  if (depth.rank() != 2 || depth.shape()[0] != pair.src_image.shape()[1] ||
      depth.shape()[1] != pair.src_image.shape()[2])
    throw ShapeMismatch("view pair: depth must be [H×W] matching the images");
}

// Per-pixel constants of the reprojection x' = d * (R K^-1 p) + t.
struct ReprojectTerms {
  Tensor bx, by, bz;  // [HW] constants
  double tx, ty, tz;
};

ReprojectTerms reproject_terms(const ViewPair& pair, int height, int width) {
  ReprojectTerms terms;
  const int n = height * width;
  terms.bx = Tensor::zeros({n});
  terms.by = Tensor::zeros({n});
  terms.bz = Tensor::zeros({n});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const Vec3 a =
          unproject(pair.intrinsics, {static_cast<double>(x), static_cast<double>(y)}, 1.0);
      const Vec3 b = pair.relative_pose.rotation * a;
      const int at = y * width + x;
      terms.bx.mutable_data()[at] = b.x;
      terms.by.mutable_data()[at] = b.y;
      terms.bz.mutable_data()[at] = b.z;
    }
  terms.tx = pair.relative_pose.translation.x;
  terms.ty = pair.relative_pose.translation.y;
  terms.tz = pair.relative_pose.translation.z;
  return terms;
}

}  // namespace

WarpResult inverse_warp(const ViewPair& pair, const Tensor& depth_src) {
  check_pair(pair, depth_src);
  const int H = depth_src.shape()[0], W = depth_src.shape()[1];
  const int n = H * W;
  const auto K = pair.intrinsics;
  const ReprojectTerms rt = reproject_terms(pair, H, W);

  Tensor d = reshape(depth_src, {n});
  Tensor xs = add_scalar(mul(d, rt.bx), rt.tx);
  Tensor ys = add_scalar(mul(d, rt.by), rt.ty);
  Tensor zs = add_scalar(mul(d, rt.bz), rt.tz);

  // Gate out non-positive depths and points closer than z_near before the
  // division; gated pixels get a unit denominator and never contribute.
  Tensor gate = Tensor::zeros({n});
  Tensor filler = Tensor::zeros({n});
  for (int i = 0; i < n; ++i) {
    const bool ok = d.data()[i] > 0.0 && zs.data()[i] > kZNear;
    gate.mutable_data()[i] = ok ? 1.0 : 0.0;
    filler.mutable_data()[i] = ok ? 0.0 : 1.0;
  }
  Tensor z_safe = add(mul(zs, gate), filler);
  Tensor u = add_scalar(scale(div(xs, z_safe), K.fx), K.cx);
  Tensor v = add_scalar(scale(div(ys, z_safe), K.fy), K.cy);

  std::vector<std::uint8_t> validity(n, 0);
  Tensor vmask = Tensor::zeros({H, W});
  for (int i = 0; i < n; ++i) {
    const bool ok = gate.data()[i] != 0.0 && u.data()[i] >= 0.0 && u.data()[i] <= W - 1 &&
                    v.data()[i] >= 0.0 && v.data()[i] <= H - 1;
    validity[i] = ok ? 1 : 0;
    vmask.mutable_data()[i] = ok ? 1.0 : 0.0;
  }

  Tensor coords = pack_columns({u, v});
  Tensor sampled = bilinear_sample(pair.tgt_image, coords).values;  // [HW×3]
  Tensor warped = mul(reshape(transpose2d(sampled), {3, H, W}), vmask);
  return {warped, std::move(validity)};
}

WarpResult forward_warp(const ViewPair& pair, const Tensor& depth_src) {
  check_pair(pair, depth_src);
  const int H = depth_src.shape()[0], W = depth_src.shape()[1];
  const auto K = pair.intrinsics;
  const std::size_t plane = static_cast<std::size_t>(H) * W;

  std::vector<double> out(3 * plane, 0.0);
  std::vector<double> zbuf(plane, 0.0);
  std::vector<std::uint8_t> validity(plane, 0);
  const double* dd = depth_src.data().data();
  const double* src = pair.src_image.data().data();

  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t at = static_cast<std::size_t>(y) * W + x;
      const double d = dd[at];
      if (d <= 0.0) continue;
      const Vec3 p = pair.relative_pose.apply(
          unproject(K, {static_cast<double>(x), static_cast<double>(y)}, d));
      if (p.z <= kZNear) continue;
      const Projection proj = project(K, p);
      const int ux = static_cast<int>(std::lround(proj.pixel.u));
      const int vy = static_cast<int>(std::lround(proj.pixel.v));
      if (ux < 0 || ux >= W || vy < 0 || vy >= H) continue;
      const std::size_t tat = static_cast<std::size_t>(vy) * W + ux;
      if (validity[tat] && zbuf[tat] <= proj.depth) continue;  // strict z-buffer
      validity[tat] = 1;
      zbuf[tat] = proj.depth;
      for (int c = 0; c < 3; ++c) out[c * plane + tat] = src[c * plane + at];
    }

  return {Tensor::from_data({3, H, W}, std::move(out)), std::move(validity)};
}

Tensor photometric_loss(const std::vector<ViewPair>& targets, const Tensor& depth_src) {
  if (targets.empty()) throw ShapeMismatch("photometric_loss: need at least one target view");
  const int H = depth_src.shape()[0], W = depth_src.shape()[1];
  const int n = H * W;

  auto branch = [&](bool forward) -> std::pair<Tensor, int> {
    std::vector<Tensor> residuals;
    std::vector<std::uint8_t> any_valid(n, 0);
    for (const ViewPair& pair : targets) {
      WarpResult wr = forward ? forward_warp(pair, depth_src) : inverse_warp(pair, depth_src);
      const Tensor& reference = forward ? pair.tgt_image : pair.src_image;
      Tensor r = sum_over_axis(abs(sub(wr.warped, reference)), 0);  // [H×W]
      Tensor vm = Tensor::zeros({H, W});
      Tensor fill = Tensor::zeros({H, W});
      for (int i = 0; i < n; ++i) {
        vm.mutable_data()[i] = wr.validity[i] ? 1.0 : 0.0;
        fill.mutable_data()[i] = wr.validity[i] ? 0.0 : kInvalidResidual;
        any_valid[i] |= wr.validity[i];
      }
      residuals.push_back(reshape(add(mul(r, vm), fill), {n}));
    }
    Tensor min_r = residuals.size() == 1 ? residuals[0] : min_over_axis(stack0(residuals), 0);
    Tensor keep = Tensor::zeros({n});
    int count = 0;
    for (int i = 0; i < n; ++i) {
      keep.mutable_data()[i] = any_valid[i] ? 1.0 : 0.0;
      count += any_valid[i];
    }
    if (count == 0) return {Tensor::scalar(0.0), 0};
    return {scale(sum(mul(min_r, keep)), 1.0 / count), count};
  };

  auto [inv_loss, inv_count] = branch(false);
  auto [fwd_loss, fwd_count] = branch(true);
  if (inv_count == 0 && fwd_count == 0)
    throw EmptyValidSet("photometric_loss: no valid pixel in any view");
  return add(inv_loss, fwd_loss);
}

}  // namespace bevforge
