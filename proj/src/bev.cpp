#include "bevforge/bev.hpp"

#include <cmath>

namespace bevforge {

Tensor collapse_to_bev(const VoxelGrid& grid) {
  Tensor weighted = mul(grid.features, grid.density);   // [F×nx×ny×nz]
  Tensor num = sum_over_axis(weighted, 2);              // [F×nx×nz]
  Tensor den = add_scalar(sum_over_axis(grid.density, 2), 1e-6);  // [1×nx×nz]
  return div(num, den);
}

BevHead BevHead::create(int feature_dim, int hidden, int num_classes, Rng& rng) {
  BevHead h;
  h.w1 = randn({hidden, feature_dim, 3, 3}, rng, std::sqrt(2.0 / (feature_dim * 9)), true);
  h.b1 = Tensor::zeros({hidden}, true);
  h.w2 = randn({num_classes, hidden, 3, 3}, rng, std::sqrt(2.0 / (hidden * 9)), true);
  h.b2 = Tensor::zeros({num_classes}, true);
  return h;
}

Tensor BevHead::apply(const Tensor& bev_feats) const {
  Tensor h = relu(conv2d(bev_feats, w1, b1, 1, 1));
  return conv2d(h, w2, b2, 1, 1);
}

std::vector<Tensor> BevHead::params() { return {w1, b1, w2, b2}; }

Tensor bev_cross_entropy(const Tensor& logits, const BevMap& gt) {
  if (logits.rank() != 3) throw ShapeMismatch("bev_cross_entropy: logits must be [C×nx×nz]");
  const int C = logits.shape()[0], nx = logits.shape()[1], nz = logits.shape()[2];
  if (nx != gt.nx || nz != gt.nz || static_cast<std::size_t>(nx) * nz != gt.classes.size())
    throw ShapeMismatch("bev_cross_entropy: grid shapes disagree");

  const int cells = nx * nz;
  Tensor picked_mask = Tensor::zeros({C, nx, nz});
  Tensor valid = Tensor::zeros({nx, nz});
  int n_valid = 0;
  for (int i = 0; i < cells; ++i) {
    const std::uint8_t cls = gt.classes[i];
    if (cls == kIgnoreIndex) continue;
    if (cls >= C) throw DomainError("bev_cross_entropy: class index out of range");
    picked_mask.mutable_data()[static_cast<std::size_t>(cls) * cells + i] = 1.0;
    valid.mutable_data()[i] = 1.0;
    ++n_valid;
  }
  if (n_valid == 0) throw AllIgnored("bev_cross_entropy: every cell is ignored");

  // Stable log-sum-exp; the max's gradient path cancels analytically.
  Tensor mx = neg(min_over_axis(neg(logits), 0));              // [nx×nz]
  Tensor lse = add(log(sum_over_axis(exp(sub(logits, mx)), 0)), mx);
  Tensor picked = sum_over_axis(mul(logits, picked_mask), 0);  // [nx×nz]
  Tensor ce = mul(sub(lse, picked), valid);
  return scale(sum(ce), 1.0 / n_valid);
}

void accumulate_confusion(const BevMap& pred, const BevMap& gt, int num_classes,
                          std::vector<std::int64_t>& confusion) {
  if (pred.classes.size() != gt.classes.size())
    throw ShapeMismatch("confusion: map sizes disagree");
  // Rows: gt class. Columns: pred class, plus one trailing column for cells
  // the prediction left unlabeled (counts as a miss for the gt class).
  confusion.resize(static_cast<std::size_t>(num_classes) * (num_classes + 1), 0);
  for (std::size_t i = 0; i < gt.classes.size(); ++i) {
    const std::uint8_t g = gt.classes[i];
    if (g == kIgnoreIndex) continue;
    const std::uint8_t p = pred.classes[i];
    if (g >= num_classes) throw DomainError("confusion: gt class out of range");
    if (p != kIgnoreIndex && p >= num_classes)
      throw DomainError("confusion: pred class out of range");
    const int col = p == kIgnoreIndex ? num_classes : p;
    confusion[static_cast<std::size_t>(g) * (num_classes + 1) + col] += 1;
  }
}

IouResult iou_from_confusion(const std::vector<std::int64_t>& confusion, int num_classes) {
  const int cols = num_classes + 1;
  IouResult out;
  out.per_class.assign(num_classes, -1.0);
  double acc = 0.0;
  int counted = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::int64_t tp = confusion[static_cast<std::size_t>(c) * cols + c];
    std::int64_t fp = 0, fn = 0;
    for (int o = 0; o < num_classes; ++o)
      if (o != c) fp += confusion[static_cast<std::size_t>(o) * cols + c];
    for (int o = 0; o < cols; ++o)
      if (o != c) fn += confusion[static_cast<std::size_t>(c) * cols + o];
    if (tp + fp + fn == 0) continue;  // absent from both, excluded from mean
    out.per_class[c] = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    acc += out.per_class[c];
    ++counted;
  }
  out.mean = counted > 0 ? acc / counted : 0.0;
  return out;
}

IouResult miou(const BevMap& pred, const BevMap& gt, int num_classes) {
  std::vector<std::int64_t> confusion;
  accumulate_confusion(pred, gt, num_classes, confusion);
  return iou_from_confusion(confusion, num_classes);
}

}  // namespace bevforge
