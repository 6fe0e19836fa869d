#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bevforge/tmae.hpp"
#include "support/gradcheck.hpp"

using namespace bevforge;
using bevforge::testing::grad_check_tensor;

namespace {

CameraIntrinsics toy_k(int w = 32, int h = 16) {
  CameraIntrinsics k;
  k.fx = k.fy = 18.0;
  k.cx = w / 2.0;
  k.cy = h / 2.0;
  k.width = w;
  k.height = h;
  return k;
}

VoxelGridSpec toy_grid() {
  VoxelGridSpec g;
  g.x_min = -4;
  g.x_max = 4;
  g.y_min = -2;
  g.y_max = 2;
  g.z_min = 0.5;
  g.z_max = 8.5;
  g.nx = 8;
  g.ny = 4;
  g.nz = 8;
  return g;
}

VoxelGrid make_grid(const VoxelGridSpec& spec, int F, Rng& rng, bool requires_grad = false) {
  VoxelGrid g;
  g.spec = spec;
  g.feature_dim = F;
  g.features = uniform({F, spec.nx, spec.ny, spec.nz}, rng, -1.0, 1.0, requires_grad);
  g.density = uniform({1, spec.nx, spec.ny, spec.nz}, rng, 0.0, 1.0, requires_grad);
  g.mask_occupancy.assign(spec.cells(), 0);
  return g;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("generate_mask: exact counts across the ratio grid") {
  for (double m : {0.0, 0.25, 0.5, 0.75, 0.9}) {
    MaskSpec spec;
    spec.patch_size = 24;
    spec.ratio = m;
    spec.seed = 3;
    MaskSpec out = generate_mask(spec, 96, 288);
    CHECK(out.patches_y * out.patches_x == 48);
    CHECK(out.masked_count() == static_cast<int>(std::llround(m * 48)));
  }
}

TEST_CASE("generate_mask: determinism and indivisible shapes") {
  MaskSpec spec;
  spec.patch_size = 24;
  spec.ratio = 0.75;
  spec.seed = 11;
  MaskSpec a = generate_mask(spec, 96, 288);
  MaskSpec b = generate_mask(spec, 96, 288);
  CHECK(a.masked == b.masked);
  spec.seed = 12;
  CHECK(generate_mask(spec, 96, 288).masked != a.masked);
  spec.patch_size = 28;  // 96 % 28 != 0
  CHECK_THROWS_AS(generate_mask(spec, 96, 288), IndivisibleShape);
}

TEST_CASE("masked_encode with ratio 0 equals the plain encoder") {
  Rng rng(1);
  FeatureEncoder enc = FeatureEncoder::create({4, 6, 6}, rng);
  Tensor img = uniform({3, 16, 32}, rng, 0.0, 1.0);
  MaskSpec m;
  m.patch_size = 8;
  m.ratio = 0.0;
  MaskSpec mask = generate_mask(m, 16, 32);
  Tensor a = masked_encode(enc, img, mask);
  Tensor b = enc.encode(img);
  CHECK(a.data() == b.data());
}

TEST_CASE("masked_encode with ratio 1 produces all-zero features") {
  Rng rng(2);
  FeatureEncoder enc = FeatureEncoder::create({4, 6, 6}, rng);
  // zero conv biases so fully masked inputs cannot re-introduce energy
  for (Tensor& p : enc.params())
    if (p.rank() == 1)
      for (double& v : p.mutable_data()) v = 0.0;
  Tensor img = uniform({3, 16, 32}, rng, 0.0, 1.0);
  MaskSpec m;
  m.patch_size = 8;
  m.ratio = 1.0;
  Tensor out = masked_encode(enc, img, generate_mask(m, 16, 32));
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("information barrier: visible features ignore masked content") {
  Rng rng(3);
  FeatureEncoder enc = FeatureEncoder::create({4, 6, 6}, rng);
  const int H = 48, W = 96, P = 12;
  Tensor img = uniform({3, H, W}, rng, 0.0, 1.0);
  MaskSpec m;
  m.patch_size = P;
  m.ratio = 0.5;
  m.seed = 7;
  MaskSpec mask = generate_mask(m, H, W);

  Tensor base = masked_encode(enc, img, mask);

  // randomize every masked pixel and re-encode
  Tensor altered = Tensor::from_data(img.shape(), img.data());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        if (mask.is_masked_pixel(y, x))
          altered.mutable_data()[(static_cast<std::size_t>(c) * H + y) * W + x] = rng.uniform();
  Tensor perturbed = masked_encode(enc, altered, mask);

  // every feature cell whose patch is visible must be bit-identical
  const int Hf = H / 4, Wf = W / 4, pf = P / 4;
  const int F = enc.feature_dim();
  for (int f = 0; f < F; ++f)
    for (int y = 0; y < Hf; ++y)
      for (int x = 0; x < Wf; ++x) {
        const bool visible = !mask.masked[(y / pf) * mask.patches_x + (x / pf)];
        if (!visible) continue;
        const std::size_t at = (static_cast<std::size_t>(f) * Hf + y) * Wf + x;
        CHECK(base.data()[at] == perturbed.data()[at]);
      }
}

TEST_CASE("lift_to_voxels gates features by density (per-voxel law)") {
  Rng rng(4);
  const int F = 5;
  FieldModel field = FieldModel::create(F, 2, 6, 20.0, rng);
  CameraIntrinsics K = toy_k();
  VoxelGridSpec spec = toy_grid();
  Tensor sem = uniform({F, 4, 8}, rng, -1.0, 1.0);
  Tensor geo = uniform({F, 4, 8}, rng, -1.0, 1.0);
  VoxelGrid g = lift_to_voxels(sem, field, geo, K, spec, nullptr);

  // independent per-voxel recomputation for a handful of cells
  for (int trial = 0; trial < 30; ++trial) {
    const int ix = static_cast<int>(rng.next_index(spec.nx));
    const int iy = static_cast<int>(rng.next_index(spec.ny));
    const int iz = static_cast<int>(rng.next_index(spec.nz));
    const Vec3 c = spec.center(ix, iy, iz);
    const Projection p = project(K, c);
    const std::size_t cell = (static_cast<std::size_t>(ix) * spec.ny + iy) * spec.nz + iz;
    const double sigma = g.density.data()[cell];
    if (!p.valid) {
      CHECK(sigma == 0.0);
      for (int f = 0; f < F; ++f)
        CHECK(g.features.data()[f * spec.cells() + cell] == 0.0);
      continue;
    }
    Tensor coord = Tensor::from_data({1, 2}, {p.pixel.u / kFeatureStride,
                                              p.pixel.v / kFeatureStride});
    Tensor feat = bilinear_sample(sem, coord).values;
    Tensor geo_f = bilinear_sample(geo, coord).values;
    Tensor enc = encoding_matrix(K, {p.pixel.u, p.pixel.v}, {c.norm()}, field.pe_bands,
                                 field.d_max);
    const double sigma_expect = field.density(geo_f, enc).value();
    CHECK(sigma == doctest::Approx(sigma_expect).epsilon(1e-12));
    for (int f = 0; f < F; ++f)
      CHECK(g.features.data()[f * spec.cells() + cell] ==
            doctest::Approx(feat.data()[f] * sigma_expect).epsilon(1e-12));
  }
}

TEST_CASE("voxels behind the camera carry zero feature and are frustum-invalid") {
  Rng rng(5);
  const int F = 3;
  FieldModel field = FieldModel::create(F, 1, 4, 20.0, rng);
  CameraIntrinsics K = toy_k();
  VoxelGridSpec spec = toy_grid();
  spec.z_min = -4.5;  // half the lattice sits behind the camera
  spec.z_max = 3.5;
  Tensor sem = uniform({F, 4, 8}, rng, 0.5, 1.0);
  Tensor geo = uniform({F, 4, 8}, rng, -1.0, 1.0);
  MaskSpec m;
  m.patch_size = 8;
  m.ratio = 1.0;
  m.seed = 1;
  MaskSpec mask = generate_mask(m, K.height, K.width);
  VoxelGrid g = lift_to_voxels(sem, field, geo, K, spec, &mask);
  int idx = 0;
  for (int ix = 0; ix < spec.nx; ++ix)
    for (int iy = 0; iy < spec.ny; ++iy)
      for (int iz = 0; iz < spec.nz; ++iz, ++idx) {
        if (spec.center(ix, iy, iz).z > kZNear) continue;
        CHECK(g.density.data()[idx] == 0.0);
        CHECK(g.mask_occupancy[idx] == 0);
        for (int f = 0; f < F; ++f) CHECK(g.features.data()[f * spec.cells() + idx] == 0.0);
      }
}

TEST_CASE("near-zero density zeroes the gated features") {
  Rng rng(6);
  const int F = 3;
  FieldModel field = FieldModel::create(F, 1, 4, 20.0, rng);
  for (Tensor& p : field.params())
    for (double& v : p.mutable_data()) v = 0.0;
  field.b2.mutable_data()[0] = -50.0;  // softplus(-50) ~ 2e-22
  CameraIntrinsics K = toy_k();
  Tensor sem = uniform({F, 4, 8}, rng, 0.5, 1.0);
  Tensor geo = Tensor::zeros({F, 4, 8});
  VoxelGrid g = lift_to_voxels(sem, field, geo, K, toy_grid(), nullptr);
  for (double v : g.features.data()) CHECK(std::fabs(v) < 1e-18);
}

TEST_CASE("densify: no masked voxels leaves the grid unchanged") {
  Rng rng(7);
  VoxelGrid g = make_grid(toy_grid(), 4, rng);
  Tensor token = uniform({4}, rng, -1.0, 1.0);
  VoxelGrid out = densify(g, token);
  CHECK(out.features.data() == g.features.data());
}

TEST_CASE("densify: zero token zeroes masked voxels, and the token gets gradients") {
  Rng rng(8);
  VoxelGridSpec spec = toy_grid();
  VoxelGrid g = make_grid(spec, 4, rng);
  for (int i = 0; i < spec.cells(); i += 3) g.mask_occupancy[i] = 1;

  VoxelGrid zeroed = densify(g, Tensor::zeros({4}));
  for (int f = 0; f < 4; ++f)
    for (int i = 0; i < spec.cells(); ++i) {
      const double v = zeroed.features.data()[f * spec.cells() + i];
      if (g.mask_occupancy[i])
        CHECK(v == 0.0);
      else
        CHECK(v == g.features.data()[f * spec.cells() + i]);
    }

  // analytic token gradient: d sum(features) / d token_f = sum of masked densities
  Tape::active().reset();
  Tensor token = uniform({4}, rng, -1.0, 1.0, true);
  VoxelGrid out = densify(g, token);
  backward(sum(out.features));
  double dens_sum = 0;
  for (int i = 0; i < spec.cells(); ++i)
    if (g.mask_occupancy[i]) dens_sum += g.density.data()[i];
  for (int f = 0; f < 4; ++f) CHECK(token.grad()[f] == doctest::Approx(dens_sum).epsilon(1e-12));
}

TEST_CASE("warp_voxels identity is bit-exact") {
  Rng rng(9);
  VoxelGrid g = make_grid(toy_grid(), 3, rng);
  for (int i = 0; i < g.spec.cells(); i += 5) g.mask_occupancy[i] = 1;
  VoxelGrid w = warp_voxels(g, identity_pose());
  CHECK(w.features.data() == g.features.data());
  CHECK(w.density.data() == g.density.data());
  CHECK(w.mask_occupancy == g.mask_occupancy);
}

TEST_CASE("warp_voxels one-pitch x translation shifts the lattice exactly") {
  Rng rng(10);
  VoxelGridSpec spec = toy_grid();
  VoxelGrid g = make_grid(spec, 2, rng);
  Pose shift = identity_pose();
  shift.translation = {spec.pitch_x(), 0.0, 0.0};  // T maps frame0 -> frame1
  VoxelGrid w = warp_voxels(g, shift);
  for (int f = 0; f < 2; ++f)
    for (int ix = 0; ix < spec.nx; ++ix)
      for (int iy = 0; iy < spec.ny; ++iy)
        for (int iz = 0; iz < spec.nz; ++iz) {
          const std::size_t at =
              ((static_cast<std::size_t>(f) * spec.nx + ix) * spec.ny + iy) * spec.nz + iz;
          const double got = w.features.data()[at];
          if (ix == 0)
            CHECK(got == 0.0);  // boundary column has no preimage
          else
            CHECK(got == g.features.data()[at - static_cast<std::size_t>(spec.ny) * spec.nz]);
        }
}

TEST_CASE("warp composition matches the direct transform on a trilinear field") {
  VoxelGridSpec spec = toy_grid();
  spec.ny = 12;  // room for the interior-support margin on every axis
  spec.nx = 12;
  spec.nz = 12;
  VoxelGrid g;
  g.spec = spec;
  g.feature_dim = 1;
  g.features = Tensor::zeros({1, spec.nx, spec.ny, spec.nz});
  g.density = Tensor::zeros({1, spec.nx, spec.ny, spec.nz});
  g.mask_occupancy.assign(spec.cells(), 0);
  // affine fields are reproduced exactly by trilinear interpolation and stay
  // affine under rigid transforms, so both warp paths are exact wherever the
  // interpolation support stays inside the lattice
  int idx = 0;
  for (int ix = 0; ix < spec.nx; ++ix)
    for (int iy = 0; iy < spec.ny; ++iy)
      for (int iz = 0; iz < spec.nz; ++iz, ++idx) {
        const Vec3 c = spec.center(ix, iy, iz);
        g.features.mutable_data()[idx] = 0.3 + 0.1 * c.x - 0.2 * c.y + 0.05 * c.z;
        g.density.mutable_data()[idx] = 2.0 + 0.05 * c.x + 0.1 * c.y - 0.04 * c.z;
      }

  Pose t01{Mat3::rot_y(0.03), {0.12, 0.05, 0.2}};
  Pose t12{Mat3::rot_y(-0.02), {-0.07, 0.02, 0.15}};
  Pose t02 = compose(t12, t01);
  VoxelGrid two_step = warp_voxels(warp_voxels(g, t01), t12);
  VoxelGrid direct = warp_voxels(g, t02);

  const Pose inv01 = invert(t01), inv12 = invert(t12);
  auto interior = [&](const Vec3& cc) {
    return cc.x >= 1.1 && cc.x <= spec.nx - 2.1 && cc.y >= 1.1 && cc.y <= spec.ny - 2.1 &&
           cc.z >= 1.1 && cc.z <= spec.nz - 2.1;
  };
  double max_diff = 0.0;
  int compared = 0;
  idx = 0;
  for (int ix = 0; ix < spec.nx; ++ix)
    for (int iy = 0; iy < spec.ny; ++iy)
      for (int iz = 0; iz < spec.nz; ++iz, ++idx) {
        const Vec3 c = spec.center(ix, iy, iz);
        const Vec3 p2 = inv12.apply(c);
        const Vec3 p1 = inv01.apply(p2);
        if (!interior(spec.cell_coords(p2)) || !interior(spec.cell_coords(p1))) continue;
        ++compared;
        max_diff = std::max(max_diff, std::fabs(two_step.features.data()[idx] -
                                                direct.features.data()[idx]));
        max_diff = std::max(max_diff,
                            std::fabs(two_step.density.data()[idx] - direct.density.data()[idx]));
      }
  CHECK(compared > spec.cells() / 4);
  CHECK(max_diff < 1e-3);
}

TEST_CASE("collapse_to_fv: zero density gives a zero feature image") {
  Rng rng(11);
  VoxelGridSpec spec = toy_grid();
  VoxelGrid g = make_grid(spec, 3, rng);
  for (double& v : g.density.mutable_data()) v = 0.0;
  CameraIntrinsics K = toy_k(16, 8);
  std::vector<Vec2> pixels;
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x) pixels.push_back({x * 4.0, y * 4.0});
  RaySamples rays = sample_rays(K, pixels, 6, 0.5, 8.0, std::nullopt);
  Tensor out = collapse_to_fv(g, rays, 2, 4);
  CHECK(out.shape() == std::vector<int>{3, 2, 4});
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("collapse_to_fv: an opaque slab returns its features") {
  VoxelGridSpec spec = toy_grid();
  VoxelGrid g;
  g.spec = spec;
  g.feature_dim = 2;
  g.features = Tensor::full({2, spec.nx, spec.ny, spec.nz}, 0.0);
  g.density = Tensor::zeros({1, spec.nx, spec.ny, spec.nz});
  g.mask_occupancy.assign(spec.cells(), 0);
  // constant feature everywhere; opaque density slab at iz in [3,5)
  for (int f = 0; f < 2; ++f)
    for (int i = 0; i < spec.cells(); ++i)
      g.features.mutable_data()[f * spec.cells() + i] = f == 0 ? 0.7 : -0.3;
  int idx = 0;
  for (int ix = 0; ix < spec.nx; ++ix)
    for (int iy = 0; iy < spec.ny; ++iy)
      for (int iz = 0; iz < spec.nz; ++iz, ++idx)
        if (iz >= 3 && iz < 5) g.density.mutable_data()[idx] = 80.0;

  CameraIntrinsics K = toy_k(16, 8);
  std::vector<Vec2> pixels = {{8.0, 4.0}, {7.0, 4.5}};  // near the optical axis
  RaySamples rays = sample_rays(K, pixels, 24, 0.5, 8.0, std::nullopt);
  Tensor out = collapse_to_fv(g, rays, 1, 2);
  for (int r = 0; r < 2; ++r) {
    CHECK(out.data()[r] == doctest::Approx(0.7).epsilon(2e-2));
    CHECK(out.data()[2 + r] == doctest::Approx(-0.3).epsilon(2e-2));
  }
}

TEST_CASE("reconstruction_loss basics: exact prediction and constant patches") {
  const int p = 4, Hf = 8, Wf = 12;
  MaskSpec m;
  m.patch_size = p * kFeatureStride;
  m.ratio = 0.5;
  m.seed = 2;
  MaskSpec mask = generate_mask(m, Hf * kFeatureStride, Wf * kFeatureStride);

  Rng rng(12);
  std::vector<double> ref(3 * Hf * Wf);
  for (double& v : ref) v = rng.uniform();

  // per-patch normalization recomputed independently
  std::vector<double> normalized(ref.size(), 0.0);
  for (int py = 0; py < Hf / p; ++py)
    for (int px = 0; px < Wf / p; ++px) {
      double mean = 0, m2 = 0;
      for (int c = 0; c < 3; ++c)
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx) {
            const double v = ref[(c * Hf + py * p + dy) * Wf + px * p + dx];
            mean += v;
            m2 += v * v;
          }
      const int count = 3 * p * p;
      mean /= count;
      const double sd = std::max(std::sqrt(std::max(m2 / count - mean * mean, 0.0)), 1e-6);
      for (int c = 0; c < 3; ++c)
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx) {
            const std::size_t at = (static_cast<std::size_t>(c) * Hf + py * p + dy) * Wf +
                                   px * p + dx;
            normalized[at] = (ref[at] - mean) / sd;
          }
    }

  ReconTarget t0;
  t0.predicted = Tensor::from_data({3, Hf, Wf}, normalized);
  t0.reference = ref;
  t0.patch_valid.assign(mask.masked.size(), 1);
  Tensor loss = reconstruction_loss({t0}, mask, 0, p);
  CHECK(loss.value() == doctest::Approx(0.0).epsilon(1e-15));

  // constant reference patch: normalized target is all zero; predicting zero
  // is exact
  std::vector<double> const_ref(ref.size(), 0.77);
  ReconTarget tc;
  tc.predicted = Tensor::zeros({3, Hf, Wf});
  tc.reference = const_ref;
  tc.patch_valid.assign(mask.masked.size(), 1);
  CHECK(reconstruction_loss({tc}, mask, 0, p).value() == doctest::Approx(0.0));
}

TEST_CASE("reconstruction_loss matches a hand-evaluated two-patch case") {
  const int p = 2, Hf = 2, Wf = 4;  // two patches side by side
  MaskSpec mask;
  mask.patch_size = p * kFeatureStride;
  mask.ratio = 0.5;
  mask.patches_x = 2;
  mask.patches_y = 1;
  mask.masked = {1, 0};  // only the left patch is masked

  std::vector<double> ref(3 * Hf * Wf);
  for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = 0.1 * static_cast<double>(i % 7);
  std::vector<double> pred(ref.size());
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = 0.05 * static_cast<double>(i % 5);

  ReconTarget t0;
  t0.predicted = Tensor::from_data({3, Hf, Wf}, pred);
  t0.reference = ref;
  t0.patch_valid = {1, 1};

  // hand evaluation over the masked (left) patch only
  double mean = 0, m2 = 0;
  const int count = 3 * p * p;
  for (int c = 0; c < 3; ++c)
    for (int dy = 0; dy < p; ++dy)
      for (int dx = 0; dx < p; ++dx) {
        const double v = ref[(c * Hf + dy) * Wf + dx];
        mean += v;
        m2 += v * v;
      }
  mean /= count;
  const double sd = std::max(std::sqrt(std::max(m2 / count - mean * mean, 0.0)), 1e-6);
  double expect = 0;
  for (int c = 0; c < 3; ++c)
    for (int dy = 0; dy < p; ++dy)
      for (int dx = 0; dx < p; ++dx) {
        const std::size_t at = (static_cast<std::size_t>(c) * Hf + dy) * Wf + dx;
        const double d = pred[at] - (ref[at] - mean) / sd;
        expect += d * d;
      }
  expect /= count;  // one selected patch

  CHECK(reconstruction_loss({t0}, mask, 0, p).value() == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(reconstruction_loss({t0, t0}, mask, 0, p), WindowMismatch);
}

TEST_CASE("footprint validity: identity pose keeps in-lattice patches") {
  VoxelGridSpec spec = toy_grid();
  CameraIntrinsics K = toy_k(16, 8);
  std::vector<Vec2> pixels;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 16; ++x) pixels.push_back({static_cast<double>(x), static_cast<double>(y)});
  RaySamples rays = sample_rays(K, pixels, 8, 0.5, 8.0, std::nullopt);
  auto valid = footprint_valid_patches(spec, identity_pose(), rays, K, 8, 16, 4);
  for (auto v : valid) CHECK(v == 1);
  // a translation that pushes the lattice far out of view invalidates patches
  Pose away = identity_pose();
  away.translation = {40.0, 0.0, 0.0};
  auto gone = footprint_valid_patches(spec, away, rays, K, 8, 16, 4);
  for (auto v : gone) CHECK(v == 0);
}

TEST_CASE("end-to-end semantic pathway gradient matches finite differences") {
  Rng rng(13);
  const int H = 16, W = 16, F = 4;
  CameraIntrinsics K;
  K.fx = K.fy = 9.0;
  K.cx = W / 2.0;
  K.cy = H / 2.0;
  K.width = W;
  K.height = H;
  VoxelGridSpec spec;
  spec.x_min = -2;
  spec.x_max = 2;
  spec.y_min = -1.5;
  spec.y_max = 1.5;
  spec.z_min = 0.5;
  spec.z_max = 4.5;
  spec.nx = 8;
  spec.ny = 8;
  spec.nz = 8;

  FeatureEncoder sem_enc = FeatureEncoder::create({3, 4, F}, rng);
  FeatureEncoder geo_enc = FeatureEncoder::create({3, 4, F}, rng);
  FieldModel field = FieldModel::create(F, 1, 5, 4.5, rng);
  Tensor token = uniform({F}, rng, -0.5, 0.5, true);
  ReconHead head = ReconHead::create(F, 6, rng);
  Tensor img = uniform({3, H, W}, rng, 0.0, 1.0);

  MaskSpec m;
  m.patch_size = 8;
  m.ratio = 0.5;
  m.seed = 5;
  MaskSpec mask = generate_mask(m, H, W);

  const int Hf = H / 4, Wf = W / 4;
  std::vector<Vec2> pixels;
  for (int y = 0; y < Hf; ++y)
    for (int x = 0; x < Wf; ++x) pixels.push_back({x * 4.0, y * 4.0});
  RaySamples rays = sample_rays(K, pixels, 4, 0.5, 4.5, 21);

  Pose t01{Mat3::rot_y(0.02), {0.05, 0.0, 0.2}};
  std::vector<double> ref0(3 * Hf * Wf), ref1(3 * Hf * Wf);
  for (double& v : ref0) v = rng.uniform();
  for (double& v : ref1) v = rng.uniform();

  auto build = [&]() {
    Tensor sem = masked_encode(sem_enc, img, mask);
    Tensor geo = geo_enc.encode(img);
    VoxelGrid v0 = lift_to_voxels(sem, field, geo, K, spec, &mask);
    VoxelGrid dense = densify(v0, token);
    ReconTarget t0;
    t0.predicted = head.apply(collapse_to_fv(dense, rays, Hf, Wf));
    t0.reference = ref0;
    t0.patch_valid = footprint_valid_patches(spec, identity_pose(), rays, K, Hf, Wf, 2);
    VoxelGrid w1 = warp_voxels(dense, t01);
    ReconTarget t1;
    t1.predicted = head.apply(collapse_to_fv(w1, rays, Hf, Wf));
    t1.reference = ref1;
    t1.patch_valid = footprint_valid_patches(spec, t01, rays, K, Hf, Wf, 2);
    return reconstruction_loss({t0, t1}, mask, 1, 2);
  };

  std::vector<Tensor> leaves = sem_enc.params();
  auto gp = geo_enc.params();
  auto fp = field.params();
  auto hp = head.params();
  leaves.insert(leaves.end(), gp.begin(), gp.end());
  leaves.insert(leaves.end(), fp.begin(), fp.end());
  leaves.insert(leaves.end(), hp.begin(), hp.end());
  leaves.push_back(token);
  auto res = grad_check_tensor(build, leaves);
  CHECK(res.max_rel_err < 1e-3);
}
