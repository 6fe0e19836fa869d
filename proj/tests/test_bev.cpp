#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bevforge/bev.hpp"
#include "support/gradcheck.hpp"

using namespace bevforge;
using bevforge::testing::grad_check_tensor;

namespace {

VoxelGrid column_grid(int F, int ny, const std::vector<double>& density_col,
                      const std::vector<double>& feature_col) {
  // 1x1 footprint with a single height column
  VoxelGridSpec spec;
  spec.nx = 1;
  spec.ny = ny;
  spec.nz = 1;
  VoxelGrid g;
  g.spec = spec;
  g.feature_dim = F;
  g.features = Tensor::from_data({F, 1, ny, 1}, feature_col);
  g.density = Tensor::from_data({1, 1, ny, 1}, density_col);
  g.mask_occupancy.assign(ny, 0);
  return g;
}

BevMap map_from(std::vector<std::uint8_t> cls, int nx, int nz, int C = kNumClasses) {
  BevMap m;
  m.nx = nx;
  m.nz = nz;
  m.num_classes = C;
  m.classes = std::move(cls);
  return m;
}

// brute-force per-class IoU over raw maps, independent of the library path
IouResult brute_force_iou(const BevMap& pred, const BevMap& gt, int C) {
  IouResult r;
  r.per_class.assign(C, -1.0);
  double acc = 0;
  int counted = 0;
  for (int c = 0; c < C; ++c) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gt.classes.size(); ++i) {
      if (gt.classes[i] == kIgnoreIndex) continue;
      const bool in_gt = gt.classes[i] == c;
      const bool in_pred = pred.classes[i] == c;
      tp += in_gt && in_pred;
      fp += !in_gt && in_pred;
      fn += in_gt && !in_pred;
    }
    if (tp + fp + fn == 0) continue;
    r.per_class[c] = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    acc += r.per_class[c];
    ++counted;
  }
  r.mean = counted ? acc / counted : 0.0;
  return r;
}

}  // namespace

TEST_CASE("collapse_to_bev: uniform features pass through any positive density") {
  VoxelGrid g = column_grid(2, 4, {0.3, 1.1, 0.6, 2.0}, {5, 5, 5, 5, -2, -2, -2, -2});
  Tensor out = collapse_to_bev(g);
  CHECK(out.shape() == std::vector<int>{2, 1, 1});
  CHECK(out.data()[0] == doctest::Approx(5.0).epsilon(1e-6));
  CHECK(out.data()[1] == doctest::Approx(-2.0).epsilon(1e-6));
}

TEST_CASE("collapse_to_bev: zero-density column collapses to zero") {
  VoxelGrid g = column_grid(1, 3, {0, 0, 0}, {4, 7, -1});
  CHECK(collapse_to_bev(g).data()[0] == 0.0);
}

TEST_CASE("collapse_to_bev: two-voxel hand case (a+3b)/4") {
  VoxelGrid g = column_grid(1, 2, {1.0, 3.0}, {2.0, 6.0});
  // (1*2 + 3*6) / (1+3) = 5, up to the epsilon guard
  CHECK(collapse_to_bev(g).data()[0] == doctest::Approx(5.0).epsilon(1e-6));
}

TEST_CASE("collapse_to_bev is invariant to uniform density rescaling") {
  Rng rng(3);
  VoxelGridSpec spec;
  spec.nx = 4;
  spec.ny = 5;
  spec.nz = 3;
  VoxelGrid g;
  g.spec = spec;
  g.feature_dim = 2;
  g.features = uniform({2, 4, 5, 3}, rng, -1, 1);
  // column mass large enough that the 1e-6 empty-column guard is negligible
  g.density = uniform({1, 4, 5, 3}, rng, 200.0, 500.0);
  VoxelGrid scaled = g;
  scaled.density = scale(g.density, 7.0);
  Tensor a = collapse_to_bev(g);
  Tensor b = collapse_to_bev(scaled);
  for (int i = 0; i < a.numel(); ++i)
    CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-9));
}

TEST_CASE("bev_cross_entropy: saturated one-hot logits give ~0 loss") {
  const int C = 4, nx = 2, nz = 2;
  BevMap gt = map_from({0, 1, 2, 3}, nx, nz, C);
  Tensor logits = Tensor::zeros({C, nx, nz});
  for (int i = 0; i < nx * nz; ++i)
    logits.mutable_data()[gt.classes[i] * nx * nz + i] = 1e6;
  CHECK(bev_cross_entropy(logits, gt).value() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("bev_cross_entropy: uniform logits give ln C") {
  const int C = 8, nx = 3, nz = 2;
  BevMap gt = map_from({0, 1, 2, 3, 4, 5}, nx, nz, C);
  Tensor logits = Tensor::full({C, nx, nz}, 0.37);
  CHECK(bev_cross_entropy(logits, gt).value() == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("bev_cross_entropy: 2x2 toy matches hand softmax computation") {
  const int C = 3, nx = 2, nz = 1;
  BevMap gt = map_from({2, 0}, nx, nz, C);
  const std::vector<double> lg = {0.5, -1.0, 0.2, 0.3, 1.5, -0.7};  // [C×2]
  Tensor logits = Tensor::from_data({C, nx, nz}, lg);
  double expect = 0;
  for (int cell = 0; cell < 2; ++cell) {
    double z = 0;
    for (int c = 0; c < C; ++c) z += std::exp(lg[c * 2 + cell]);
    expect += -std::log(std::exp(lg[gt.classes[cell] * 2 + cell]) / z);
  }
  expect /= 2;
  CHECK(bev_cross_entropy(logits, gt).value() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("bev_cross_entropy: ignored cells and AllIgnored") {
  const int C = 3;
  BevMap gt = map_from({1, kIgnoreIndex}, 2, 1, C);
  Tensor logits = Tensor::from_data({C, 2, 1}, {0.1, 5.0, 0.2, -3.0, 0.3, 0.0});
  // only the first cell counts
  double z = std::exp(0.1) + std::exp(0.2) + std::exp(0.3);
  CHECK(bev_cross_entropy(logits, gt).value() ==
        doctest::Approx(-std::log(std::exp(0.2) / z)).epsilon(1e-12));
  BevMap all = map_from({kIgnoreIndex, kIgnoreIndex}, 2, 1, C);
  CHECK_THROWS_AS(bev_cross_entropy(logits, all), AllIgnored);
}

TEST_CASE("bev_cross_entropy is invariant to per-cell logit shifts") {
  Rng rng(5);
  const int C = 5, nx = 3, nz = 4;
  std::vector<std::uint8_t> cls(nx * nz);
  for (auto& c : cls) c = static_cast<std::uint8_t>(rng.next_index(C));
  BevMap gt = map_from(cls, nx, nz, C);
  Tensor logits = uniform({C, nx, nz}, rng, -2, 2);
  Tensor shifted = Tensor::from_data(logits.shape(), logits.data());
  for (int i = 0; i < nx * nz; ++i) {
    const double delta = rng.uniform(-5, 5);
    for (int c = 0; c < C; ++c) shifted.mutable_data()[c * nx * nz + i] += delta;
  }
  CHECK(bev_cross_entropy(logits, gt).value() ==
        doctest::Approx(bev_cross_entropy(shifted, gt).value()).epsilon(1e-9));
}

TEST_CASE("bev_cross_entropy gradient matches finite differences") {
  Rng rng(6);
  const int C = 4, nx = 3, nz = 3;
  std::vector<std::uint8_t> cls(nx * nz);
  for (std::size_t i = 0; i < cls.size(); ++i)
    cls[i] = i == 4 ? kIgnoreIndex : static_cast<std::uint8_t>(rng.next_index(C));
  BevMap gt = map_from(cls, nx, nz, C);
  Tensor logits = uniform({C, nx, nz}, rng, -1, 1, true);
  auto build = [&]() { return bev_cross_entropy(logits, gt); };
  CHECK(grad_check_tensor(build, {logits}).max_rel_err < 1e-5);
}

TEST_CASE("miou: perfect prediction scores 1") {
  BevMap gt = map_from({0, 1, 2, 3, 4, 0, 1, 2}, 4, 2);
  IouResult r = miou(gt, gt, kNumClasses);
  CHECK(r.mean == doctest::Approx(1.0));
  for (int c = 0; c < kNumClasses; ++c) CHECK(r.per_class[c] == doctest::Approx(1.0));
}

TEST_CASE("miou: disjoint single-class maps score 0") {
  BevMap pred = map_from({0, 0, 0, 0}, 2, 2);
  BevMap gt = map_from({1, 1, 1, 1}, 2, 2);
  IouResult r = miou(pred, gt, kNumClasses);
  CHECK(r.per_class[0] == doctest::Approx(0.0));
  CHECK(r.per_class[1] == doctest::Approx(0.0));
  CHECK(r.mean == doctest::Approx(0.0));
  CHECK(r.per_class[2] == -1.0);  // absent from both maps
}

TEST_CASE("miou: mixed grids match the brute-force confusion oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int nx = 2 + static_cast<int>(rng.next_index(4));
    const int nz = 2 + static_cast<int>(rng.next_index(4));
    std::vector<std::uint8_t> p(nx * nz), g(nx * nz);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = static_cast<std::uint8_t>(rng.next_index(kNumClasses));
      g[i] = rng.uniform() < 0.1 ? kIgnoreIndex
                                 : static_cast<std::uint8_t>(rng.next_index(kNumClasses));
    }
    BevMap pred = map_from(p, nx, nz);
    BevMap gt = map_from(g, nx, nz);
    IouResult lib = miou(pred, gt, kNumClasses);
    IouResult ref = brute_force_iou(pred, gt, kNumClasses);
    CHECK(std::fabs(lib.mean - ref.mean) < 1e-12);
    for (int c = 0; c < kNumClasses; ++c)
      CHECK(std::fabs(lib.per_class[c] - ref.per_class[c]) < 1e-12);
  }
}

TEST_CASE("miou is invariant under a consistent class permutation") {
  Rng rng(8);
  std::vector<std::uint8_t> p(24), g(24);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = static_cast<std::uint8_t>(rng.next_index(kNumClasses));
    g[i] = static_cast<std::uint8_t>(rng.next_index(kNumClasses));
  }
  const std::uint8_t perm[kNumClasses] = {3, 0, 4, 1, 2};
  std::vector<std::uint8_t> pp(p.size()), gp(g.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    pp[i] = perm[p[i]];
    gp[i] = perm[g[i]];
  }
  const double a = miou(map_from(p, 6, 4), map_from(g, 6, 4), kNumClasses).mean;
  const double b = miou(map_from(pp, 6, 4), map_from(gp, 6, 4), kNumClasses).mean;
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("bev head shapes and gradients") {
  Rng rng(9);
  BevHead head = BevHead::create(6, 8, kNumClasses, rng);
  Tensor feats = uniform({6, 5, 7}, rng, -1, 1, true);
  Tensor logits = head.apply(feats);
  CHECK(logits.shape() == std::vector<int>{kNumClasses, 5, 7});

  std::vector<std::uint8_t> cls(35);
  for (std::size_t i = 0; i < cls.size(); ++i)
    cls[i] = static_cast<std::uint8_t>(rng.next_index(kNumClasses));
  BevMap gt = map_from(cls, 5, 7);
  auto build = [&]() { return bev_cross_entropy(head.apply(feats), gt); };
  auto leaves = head.params();
  leaves.push_back(feats);
  CHECK(grad_check_tensor(build, leaves).max_rel_err < 1e-4);
}
