#include "bevforge/tmae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bevforge {

int MaskSpec::masked_count() const {
  int n = 0;
  for (std::uint8_t m : masked) n += m;
  return n;
}

MaskSpec generate_mask(MaskSpec spec, int image_height, int image_width) {
  if (spec.patch_size <= 0 || image_height % spec.patch_size != 0 ||
      image_width % spec.patch_size != 0)
    throw IndivisibleShape("generate_mask: patch size must tile the image");
  if (spec.ratio < 0.0 || spec.ratio > 1.0)
    throw DomainError("generate_mask: ratio must be in [0,1]");
  spec.patches_y = image_height / spec.patch_size;
  spec.patches_x = image_width / spec.patch_size;
  const int total = spec.patches_y * spec.patches_x;
  const int want = static_cast<int>(std::llround(spec.ratio * total));
  std::vector<int> order(total);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng.engine());
  spec.masked.assign(total, 0);
  for (int i = 0; i < want; ++i) spec.masked[order[i]] = 1;
  return spec;
}

namespace {

// 0/1 keep-mask at the resolution reached after `stride` cumulative
// downsampling, sampled at receptive-field centers (stride*i, stride*j).
Tensor keep_mask(const MaskSpec& mask, int image_height, int image_width, int stride) {
  const int h = (image_height + stride - 1) / stride;
  const int w = (image_width + stride - 1) / stride;
  Tensor t = Tensor::zeros({h, w});
  double* d = t.mutable_data().data();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      d[static_cast<long>(i) * w + j] = mask.is_masked_pixel(i * stride, j * stride) ? 0.0 : 1.0;
  return t;
}

}  // namespace

Tensor masked_encode(const FeatureEncoder& encoder, const Tensor& image, const MaskSpec& mask) {
  if (image.rank() != 3) throw ShapeMismatch("masked_encode: image must be [3×H×W]");
  const int H = image.shape()[1], W = image.shape()[2];
  if (mask.masked.empty()) throw ShapeMismatch("masked_encode: mask not generated");
  Tensor x = mul(image, keep_mask(mask, H, W, 1));
  Tensor s1 = mul(relu(conv2d(x, encoder.w1, encoder.b1, 2, 1)), keep_mask(mask, H, W, 2));
  Tensor s2 = mul(relu(conv2d(s1, encoder.w2, encoder.b2, 2, 1)), keep_mask(mask, H, W, 4));
  return mul(relu(conv2d(s2, encoder.w3, encoder.b3, 1, 1)), keep_mask(mask, H, W, 4));
}

VoxelGrid lift_to_voxels(const Tensor& sem_feats, const FieldModel& field,
                         const Tensor& geo_feats, const CameraIntrinsics& K,
                         const VoxelGridSpec& spec, const MaskSpec* mask) {
  const int N = spec.cells();
  const int F = sem_feats.shape()[0];

  // Project every voxel center; invalid centers get an off-image sentinel so
  // sampling returns zero without reading real pixels.
  Tensor feat_coords = Tensor::zeros({N, 2});
  std::vector<double> pix_uv(2 * static_cast<std::size_t>(N));
  std::vector<double> dists(N);
  Tensor frustum = Tensor::zeros({N, 1});
  std::vector<std::uint8_t> occupancy(N, 0);
  double* fc = feat_coords.mutable_data().data();
  double* fr = frustum.mutable_data().data();
  int idx = 0;
  for (int ix = 0; ix < spec.nx; ++ix)
    for (int iy = 0; iy < spec.ny; ++iy)
      for (int iz = 0; iz < spec.nz; ++iz, ++idx) {
        const Vec3 c = spec.center(ix, iy, iz);
        const Projection p = project(K, c);
        dists[idx] = c.norm();
        if (p.valid) {
          fc[2 * idx] = p.pixel.u / kFeatureStride;
          fc[2 * idx + 1] = p.pixel.v / kFeatureStride;
          pix_uv[2 * idx] = p.pixel.u;
          pix_uv[2 * idx + 1] = p.pixel.v;
          fr[idx] = 1.0;
          if (mask && mask->is_masked_pixel(static_cast<int>(p.pixel.v),
                                            static_cast<int>(p.pixel.u)))
            occupancy[idx] = 1;
        } else {
          fc[2 * idx] = -5.0;
          fc[2 * idx + 1] = -5.0;
          pix_uv[2 * idx] = 0.0;
          pix_uv[2 * idx + 1] = 0.0;
        }
      }

  Tensor feats = mul(bilinear_sample(sem_feats, feat_coords).values, frustum);  // [N×F]
  Tensor geo_at_voxels = bilinear_sample(geo_feats, feat_coords).values;
  Tensor enc = encoding_matrix(K, pix_uv, dists, field.pe_bands, field.d_max);
  Tensor sigma = mul(field.density(geo_at_voxels, enc), reshape(frustum, {N}));  // [N]

  Tensor gated = mul(feats, reshape(sigma, {N, 1}));

  VoxelGrid grid;
  grid.spec = spec;
  grid.feature_dim = F;
  grid.features = reshape(transpose2d(gated), {F, spec.nx, spec.ny, spec.nz});
  grid.density = reshape(sigma, {1, spec.nx, spec.ny, spec.nz});
  grid.mask_occupancy = std::move(occupancy);
  return grid;
}

VoxelGrid densify(const VoxelGrid& grid, const Tensor& mask_token) {
  const int F = grid.feature_dim;
  if (mask_token.rank() != 1 || mask_token.shape()[0] != F)
    throw ShapeMismatch("densify: token width must match feature dim");
  const auto& spec = grid.spec;
  Tensor occ = Tensor::zeros({1, spec.nx, spec.ny, spec.nz});
  for (int i = 0; i < spec.cells(); ++i)
    occ.mutable_data()[i] = grid.mask_occupancy[i] ? 1.0 : 0.0;
  Tensor keep = add_scalar(neg(occ), 1.0);
  Tensor token_grid = mul(reshape(mask_token, {F, 1, 1, 1}), grid.density);
  VoxelGrid out = grid;
  out.features = add(mul(grid.features, keep), mul(token_grid, occ));
  return out;
}

VoxelGrid warp_voxels(const VoxelGrid& grid, const Pose& t_0_to_i) {
  const auto& spec = grid.spec;
  const Pose inv = invert(t_0_to_i);
  const int N = spec.cells();
  std::vector<double> pts(3 * static_cast<std::size_t>(N));
  std::vector<std::uint8_t> occ(N, 0);
  int idx = 0;
  for (int ix = 0; ix < spec.nx; ++ix)
    for (int iy = 0; iy < spec.ny; ++iy)
      for (int iz = 0; iz < spec.nz; ++iz, ++idx) {
        const Vec3 src = inv.apply(spec.center(ix, iy, iz));
        const Vec3 cc = spec.cell_coords(src);
        pts[3 * idx] = cc.x;
        pts[3 * idx + 1] = cc.y;
        pts[3 * idx + 2] = cc.z;
        const int jx = static_cast<int>(std::lround(cc.x));
        const int jy = static_cast<int>(std::lround(cc.y));
        const int jz = static_cast<int>(std::lround(cc.z));
        if (jx >= 0 && jx < spec.nx && jy >= 0 && jy < spec.ny && jz >= 0 && jz < spec.nz)
          occ[idx] = grid.mask_occupancy[(static_cast<std::size_t>(jx) * spec.ny + jy) * spec.nz +
                                         jz];
      }

  VoxelGrid out;
  out.spec = spec;
  out.feature_dim = grid.feature_dim;
  out.features = reshape(transpose2d(trilinear_sample(grid.features, pts).values),
                         {grid.feature_dim, spec.nx, spec.ny, spec.nz});
  out.density =
      reshape(transpose2d(trilinear_sample(grid.density, pts).values), {1, spec.nx, spec.ny, spec.nz});
  out.mask_occupancy = std::move(occ);
  return out;
}

Tensor collapse_to_fv(const VoxelGrid& grid, const RaySamples& rays, int feat_height,
                      int feat_width, AlphaFormula formula) {
  const int R = rays.num_rays, k = rays.k;
  if (R != feat_height * feat_width) throw ShapeMismatch("collapse_to_fv: ray count mismatch");
  const int N = R * k;
  std::vector<double> pts(3 * static_cast<std::size_t>(N));
  for (int r = 0; r < R; ++r) {
    const Vec3 dir{rays.dirs[3 * r], rays.dirs[3 * r + 1], rays.dirs[3 * r + 2]};
    for (int i = 0; i < k; ++i) {
      const double d = rays.dist[static_cast<std::size_t>(r) * k + i];
      const Vec3 cc = grid.spec.cell_coords(dir * d);
      const std::size_t n = static_cast<std::size_t>(r) * k + i;
      pts[3 * n] = cc.x;
      pts[3 * n + 1] = cc.y;
      pts[3 * n + 2] = cc.z;
    }
  }
  Tensor feats_all = trilinear_sample(grid.features, pts).values;  // [N×F]
  Tensor dens_all = trilinear_sample(grid.density, pts).values;    // [N×1]

  RaySamples marcher = rays;  // reuse the termination-weight recursion
  marcher.sigma = reshape(dens_all, {N});
  composite_depth(marcher, formula);

  Tensor acc = Tensor::zeros({R, grid.feature_dim});
  std::vector<int> rows(R);
  for (int i = 0; i < k; ++i) {
    for (int r = 0; r < R; ++r) rows[r] = r * k + i;
    Tensor feat_i = gather_rows(feats_all, rows);  // [R×F]
    acc = add(acc, mul(feat_i, reshape(marcher.weights[i], {R, 1})));
  }
  return reshape(transpose2d(acc), {grid.feature_dim, feat_height, feat_width});
}

ReconHead ReconHead::create(int feature_dim, int hidden, Rng& rng) {
  ReconHead h;
  h.w1 = randn({feature_dim, hidden}, rng, std::sqrt(2.0 / feature_dim), true);
  h.b1 = Tensor::zeros({hidden}, true);
  h.w2 = randn({hidden, 3}, rng, std::sqrt(2.0 / hidden), true);
  h.b2 = Tensor::zeros({3}, true);
  return h;
}

Tensor ReconHead::apply(const Tensor& fv_feats) const {
  const int F = fv_feats.shape()[0], H = fv_feats.shape()[1], W = fv_feats.shape()[2];
  Tensor rows = transpose2d(reshape(fv_feats, {F, H * W}));  // [HW×F]
  Tensor h = relu(add(matmul(rows, w1), b1));
  Tensor rgb = add(matmul(h, w2), b2);  // [HW×3]
  return reshape(transpose2d(rgb), {3, H, W});
}

std::vector<Tensor> ReconHead::params() { return {w1, b1, w2, b2}; }

std::vector<std::uint8_t> footprint_valid_patches(const VoxelGridSpec& spec,
                                                  const Pose& t_0_to_i, const RaySamples& rays,
                                                  const CameraIntrinsics& K, int feat_height,
                                                  int feat_width, int feat_patch) {
  const Pose inv = invert(t_0_to_i);
  const int px = feat_width / feat_patch, py = feat_height / feat_patch;
  std::vector<int> hits(static_cast<std::size_t>(px) * py, 0);
  for (int r = 0; r < rays.num_rays; ++r) {
    const Vec3 dir{rays.dirs[3 * r], rays.dirs[3 * r + 1], rays.dirs[3 * r + 2]};
    bool ok = false;
    for (int i = 0; i < rays.k && !ok; ++i) {
      const Vec3 x = dir * rays.dist[static_cast<std::size_t>(r) * rays.k + i];
      if (!spec.contains(x)) continue;
      const Vec3 src = inv.apply(x);
      if (!spec.contains(src)) continue;
      if (!project(K, src).valid) continue;
      ok = true;
    }
    if (ok) {
      const int fy = r / feat_width, fx = r % feat_width;
      ++hits[static_cast<std::size_t>(fy / feat_patch) * px + fx / feat_patch];
    }
  }
  std::vector<std::uint8_t> valid(hits.size(), 0);
  const int half = feat_patch * feat_patch / 2;
  for (std::size_t p = 0; p < hits.size(); ++p) valid[p] = hits[p] >= half ? 1 : 0;
  return valid;
}

Tensor reconstruction_loss(const std::vector<ReconTarget>& targets, const MaskSpec& mask,
                           int window_n, int feat_patch) {
  if (static_cast<int>(targets.size()) != window_n + 1)
    throw WindowMismatch("reconstruction_loss: expected window_n + 1 targets");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const ReconTarget& tgt = targets[t];
    const int H = tgt.predicted.shape()[1], W = tgt.predicted.shape()[2];
    const int px = W / feat_patch, py = H / feat_patch;
    if (tgt.reference.size() != static_cast<std::size_t>(3) * H * W)
      throw ShapeMismatch("reconstruction_loss: reference size mismatch");
    if (tgt.patch_valid.size() != static_cast<std::size_t>(px) * py)
      throw ShapeMismatch("reconstruction_loss: patch validity size mismatch");
    if (px != mask.patches_x || py != mask.patches_y)
      throw ShapeMismatch("reconstruction_loss: mask lattice does not match prediction");

    Tensor norm_ref = Tensor::zeros({3, H, W});
    Tensor sel = Tensor::zeros({H, W});
    double* nr = norm_ref.mutable_data().data();
    double* sl = sel.mutable_data().data();
    int n_selected = 0;
    for (int pyi = 0; pyi < py; ++pyi)
      for (int pxi = 0; pxi < px; ++pxi) {
        const bool chosen =
            tgt.patch_valid[static_cast<std::size_t>(pyi) * px + pxi] &&
            (t > 0 || mask.masked[static_cast<std::size_t>(pyi) * mask.patches_x + pxi]);
        if (!chosen) continue;
        ++n_selected;
        // per-patch normalization over all 3*p*p values
        double m = 0.0, m2 = 0.0;
        const int count = 3 * feat_patch * feat_patch;
        for (int c = 0; c < 3; ++c)
          for (int dy = 0; dy < feat_patch; ++dy)
            for (int dx = 0; dx < feat_patch; ++dx) {
              const double v =
                  tgt.reference[(static_cast<std::size_t>(c) * H + pyi * feat_patch + dy) * W +
                                pxi * feat_patch + dx];
              m += v;
              m2 += v * v;
            }
        m /= count;
        const double var = std::max(m2 / count - m * m, 0.0);
        const double inv_std = 1.0 / std::max(std::sqrt(var), 1e-6);
        for (int c = 0; c < 3; ++c)
          for (int dy = 0; dy < feat_patch; ++dy)
            for (int dx = 0; dx < feat_patch; ++dx) {
              const std::size_t at =
                  (static_cast<std::size_t>(c) * H + pyi * feat_patch + dy) * W +
                  pxi * feat_patch + dx;
              nr[at] = (tgt.reference[at] - m) * inv_std;
            }
        for (int dy = 0; dy < feat_patch; ++dy)
          for (int dx = 0; dx < feat_patch; ++dx)
            sl[static_cast<std::size_t>(pyi * feat_patch + dy) * W + pxi * feat_patch + dx] = 1.0;
      }
    if (n_selected == 0) continue;
    Tensor diff = sub(tgt.predicted, norm_ref);
    Tensor masked_sq = mul(mul(diff, diff), sel);
    const double denom = static_cast<double>(n_selected) * 3 * feat_patch * feat_patch;
    total = add(total, scale(sum(masked_sq), 1.0 / denom));
  }
  return total;
}

}  // namespace bevforge
