#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bevforge/photometric.hpp"
#include "bevforge/synthscene.hpp"
#include "support/gradcheck.hpp"

using namespace bevforge;
using bevforge::testing::grad_check_tensor;

namespace {

Tensor image_tensor(const FrameData& f, int h, int w) {
  return Tensor::from_data({3, h, w}, f.rgb);
}

Tensor depth_tensor(const FrameData& f, int h, int w) {
  return Tensor::from_data({h, w}, f.depth);
}

double masked_max_abs_diff(const Tensor& a, const Tensor& b,
                           const std::vector<std::uint8_t>& valid) {
  const int n = static_cast<int>(valid.size());
  double m = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < n; ++i)
      if (valid[i])
        m = std::max(m, std::fabs(a.data()[static_cast<std::size_t>(c) * n + i] -
                                  b.data()[static_cast<std::size_t>(c) * n + i]));
  return m;
}

}  // namespace

TEST_CASE("inverse warp with identity pose reproduces the target exactly") {
  SceneSpec spec = random_scene(50, 2);
  SceneBundle b = generate_scene(spec);
  const int H = spec.height, W = spec.width;
  ViewPair pair{image_tensor(b.frames[0], H, W), image_tensor(b.frames[0], H, W),
                identity_pose(), spec.intrinsics()};
  WarpResult wr = inverse_warp(pair, depth_tensor(b.frames[0], H, W));
  int n_valid = 0, n_depth = 0, n_interior_invalid = 0;
  for (std::size_t i = 0; i < wr.validity.size(); ++i) {
    n_valid += wr.validity[i];
    if (b.frames[0].depth[i] > 0.0) {
      ++n_depth;
      // away from the image border only fp-exact reprojections occur
      const int y = static_cast<int>(i) / W, x = static_cast<int>(i) % W;
      if (!wr.validity[i] && x > 0 && x < W - 1 && y > 0 && y < H - 1) ++n_interior_invalid;
    }
  }
  CHECK(n_interior_invalid == 0);
  CHECK(n_valid > (n_depth * 99) / 100);
  CHECK(masked_max_abs_diff(wr.warped, pair.tgt_image, wr.validity) < 1e-9);
}

TEST_CASE("invalid pixels hold exactly zero") {
  SceneSpec spec = random_scene(51, 2);
  SceneBundle b = generate_scene(spec);
  const int H = spec.height, W = spec.width;
  ViewPair pair{image_tensor(b.frames[0], H, W), image_tensor(b.frames[1], H, W),
                b.relative_pose(0, 1), spec.intrinsics()};
  WarpResult wr = inverse_warp(pair, depth_tensor(b.frames[0], H, W));
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (std::size_t i = 0; i < plane; ++i)
    if (!wr.validity[i])
      for (int c = 0; c < 3; ++c) CHECK(wr.warped.data()[c * plane + i] == 0.0);
}

TEST_CASE("pure x-translation over a fronto-parallel plane shifts by fx*tx/z") {
  // analytic planar case: constant depth z0, translation tx chosen so the
  // pixel shift fx*tx/z0 is exactly 3 columns
  const int H = 8, W = 16;
  const double z0 = 10.0, fx = 100.0, shift = 3.0;
  const double tx = shift * z0 / fx;
  CameraIntrinsics K;
  K.fx = K.fy = fx;
  K.cx = W / 2.0;
  K.cy = H / 2.0;
  K.width = W;
  K.height = H;
  Rng rng(5);
  Tensor tgt = uniform({3, H, W}, rng, 0.0, 1.0);
  Pose rel = identity_pose();
  rel.translation = {tx, 0.0, 0.0};
  ViewPair pair{Tensor::zeros({3, H, W}), tgt, rel, K};
  WarpResult wr = inverse_warp(pair, Tensor::full({H, W}, z0));
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * W + x;
      const int xs = x + static_cast<int>(shift);
      if (xs >= W) {
        CHECK(wr.validity[i] == 0);
        continue;
      }
      REQUIRE(wr.validity[i] == 1);
      for (int c = 0; c < 3; ++c)
        CHECK(wr.warped.data()[c * plane + i] ==
              doctest::Approx(tgt.data()[c * plane + y * W + xs]).epsilon(1e-12));
    }
}

TEST_CASE("all-zero depth: inverse validity empty, photometric loss throws") {
  SceneSpec spec = random_scene(52, 2);
  SceneBundle b = generate_scene(spec);
  const int H = spec.height, W = spec.width;
  ViewPair pair{image_tensor(b.frames[0], H, W), image_tensor(b.frames[1], H, W),
                b.relative_pose(0, 1), spec.intrinsics()};
  Tensor zero_depth = Tensor::zeros({H, W});
  WarpResult wr = inverse_warp(pair, zero_depth);
  for (auto v : wr.validity) CHECK(v == 0);
  CHECK_THROWS_AS(photometric_loss({pair}, zero_depth), EmptyValidSet);
}

TEST_CASE("forward warp with identity pose returns the source at hit pixels") {
  SceneSpec spec = random_scene(53, 2);
  SceneBundle b = generate_scene(spec);
  const int H = spec.height, W = spec.width;
  ViewPair pair{image_tensor(b.frames[0], H, W), image_tensor(b.frames[0], H, W),
                identity_pose(), spec.intrinsics()};
  WarpResult wr = forward_warp(pair, depth_tensor(b.frames[0], H, W));
  CHECK(masked_max_abs_diff(wr.warped, pair.src_image, wr.validity) == 0.0);
}

TEST_CASE("forward warp z-buffer keeps the nearer source pixel") {
  // two source pixels splat onto the same target pixel; depth 1 must win
  CameraIntrinsics K;
  K.fx = K.fy = 10.0;
  K.cx = K.cy = 0.5;
  K.width = 2;
  K.height = 1;
  Tensor src = Tensor::from_data({3, 1, 2}, {0.1, 0.9, 0.1, 0.9, 0.1, 0.9});
  Pose rel = identity_pose();
  rel.translation = {0.05, 0.0, 0.0};
  ViewPair pair{src, src, rel, K};
  Tensor depth = Tensor::from_data({1, 2}, {1.0, 2.0});
  WarpResult wr = forward_warp(pair, depth);
  REQUIRE(wr.validity[1] == 1);
  // target pixel 1 receives both candidates; the depth-1 source pixel (index
  // 0, value 0.1 per channel) must be retained
  CHECK(wr.warped.data()[1] == doctest::Approx(0.1));
}

TEST_CASE("forward warp coverage on a forward-motion pair") {
  SceneSpec spec = random_scene(54, 3);
  SceneBundle b = generate_scene(spec);
  const int H = spec.height, W = spec.width;
  ViewPair pair{image_tensor(b.frames[0], H, W), image_tensor(b.frames[1], H, W),
                b.relative_pose(0, 1), spec.intrinsics()};
  WarpResult wr = forward_warp(pair, depth_tensor(b.frames[0], H, W));
  int hit = 0, candidates = 0;
  for (std::size_t i = 0; i < wr.validity.size(); ++i) {
    if (b.frames[1].depth[i] > 0.0) {
      ++candidates;
      hit += wr.validity[i];
    }
  }
  CHECK(candidates > 0);
  CHECK(static_cast<double>(hit) / candidates >= 0.8);
}

TEST_CASE("photometric loss is ~0 under identity pose with exact depth") {
  SceneSpec spec = random_scene(55, 2);
  SceneBundle b = generate_scene(spec);
  const int H = spec.height, W = spec.width;
  ViewPair pair{image_tensor(b.frames[0], H, W), image_tensor(b.frames[0], H, W),
                identity_pose(), spec.intrinsics()};
  Tensor loss = photometric_loss({pair}, depth_tensor(b.frames[0], H, W));
  CHECK(loss.value() < 1e-9);
  CHECK(loss.value() >= 0.0);
}

TEST_CASE("constant-color images give zero loss for any depth") {
  const int H = 6, W = 9;
  CameraIntrinsics K;
  K.fx = K.fy = 10.0;
  K.cx = W / 2.0;
  K.cy = H / 2.0;
  K.width = W;
  K.height = H;
  Tensor img = Tensor::full({3, H, W}, 0.42);
  Pose rel = identity_pose();
  rel.translation = {0.05, 0.0, 0.1};
  ViewPair pair{img, img, rel, K};
  Tensor loss = photometric_loss({pair}, Tensor::full({H, W}, 5.0));
  CHECK(loss.value() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("per-pixel min selects the unoccluded view") {
  SceneSpec spec = random_scene(56, 2);
  SceneBundle b = generate_scene(spec);
  const int H = spec.height, W = spec.width;
  Tensor depth = depth_tensor(b.frames[0], H, W);
  ViewPair good{image_tensor(b.frames[0], H, W), image_tensor(b.frames[0], H, W),
                identity_pose(), spec.intrinsics()};
  // fully occluding second view: same geometry, unrelated content
  Rng rng(9);
  ViewPair occluded{good.src_image, uniform({3, H, W}, rng, 0.0, 1.0), identity_pose(),
                    spec.intrinsics()};
  Tensor single = photometric_loss({good}, depth);
  Tensor both = photometric_loss({good, occluded}, depth);
  CHECK(both.value() == doctest::Approx(single.value()).epsilon(1e-12));
}

TEST_CASE("adding a redundant view never increases the loss (validity fixed)") {
  SceneSpec spec = random_scene(57, 3);
  SceneBundle b = generate_scene(spec);
  const int H = spec.height, W = spec.width;
  Tensor depth = depth_tensor(b.frames[0], H, W);
  ViewPair a{image_tensor(b.frames[0], H, W), image_tensor(b.frames[1], H, W),
             b.relative_pose(0, 1), spec.intrinsics()};
  Rng rng(10);
  ViewPair noisy{a.src_image, uniform({3, H, W}, rng, 0.0, 1.0), a.relative_pose,
                 spec.intrinsics()};
  const double one = photometric_loss({a}, depth).value();
  const double dup = photometric_loss({a, a}, depth).value();
  const double extra = photometric_loss({a, noisy}, depth).value();
  CHECK(dup == doctest::Approx(one).epsilon(1e-12));
  CHECK(extra <= one + 1e-12);
}

TEST_CASE("photometric loss gradient w.r.t. depth matches finite differences") {
  const int H = 8, W = 8;
  CameraIntrinsics K;
  K.fx = K.fy = 9.0;
  K.cx = W / 2.0;
  K.cy = H / 2.0;
  K.width = W;
  K.height = H;
  Rng rng(12);
  // smooth target so bilinear gradients are informative
  Tensor tgt = Tensor::zeros({3, H, W});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        tgt.mutable_data()[(static_cast<std::size_t>(c) * H + y) * W + x] =
            0.5 + 0.4 * std::sin(0.9 * x + 0.7 * y + c);
  Tensor src = uniform({3, H, W}, rng, 0.0, 1.0);
  Pose rel = identity_pose();
  rel.rotation = Mat3::rot_y(0.02);
  rel.translation = {0.08, 0.02, 0.05};
  ViewPair pair{src, tgt, rel, K};
  Tensor depth = uniform({H, W}, rng, 3.0, 6.0, true);
  auto build = [&]() { return photometric_loss({pair}, depth); };
  auto res = grad_check_tensor(build, {depth});
  CHECK(res.max_rel_err < 1e-3);
}
