#include "bevforge/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace bevforge {
namespace {

bool should_record(const std::vector<const Tensor*>& inputs) {
  if (!Tape::active().recording()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

Tensor make_output(std::vector<int> shape, bool track, bool zero_init = true) {
  Tensor out = make_tensor(std::move(shape), false, zero_init);
  out.node()->requires_grad = track;
  return out;
}

// Broadcast plan for right-aligned shapes (dims equal or 1).
struct Bcast {
  std::vector<int> oshape;
  int onumel = 1;
  bool same = false;
  std::vector<long> astride, bstride;  // 0 on broadcast dims
};

Bcast make_bcast(const std::vector<int>& a, const std::vector<int>& b) {
  Bcast bc;
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  bc.oshape.resize(r);
  for (int d = 0; d < r; ++d) {
    const int ad = d - (r - ra) >= 0 ? a[d - (r - ra)] : 1;
    const int bd = d - (r - rb) >= 0 ? b[d - (r - rb)] : 1;
    if (ad != bd && ad != 1 && bd != 1)
      throw ShapeMismatch("broadcast: incompatible dims " + std::to_string(ad) + " vs " +
                          std::to_string(bd));
    bc.oshape[d] = std::max(ad, bd);
  }
  bc.onumel = numel_of(bc.oshape);
  bc.same = (a == b);
  bc.astride.assign(r, 0);
  bc.bstride.assign(r, 0);
  long sa = 1, sb = 1;
  for (int d = r - 1; d >= 0; --d) {
    const int ad = d - (r - ra) >= 0 ? a[d - (r - ra)] : 1;
    const int bd = d - (r - rb) >= 0 ? b[d - (r - rb)] : 1;
    bc.astride[d] = (ad == 1) ? 0 : sa;
    bc.bstride[d] = (bd == 1) ? 0 : sb;
    sa *= ad;
    sb *= bd;
  }
  return bc;
}

template <class F>
void bcast_iterate(const Bcast& bc, F&& f) {
  if (bc.same) {
    for (int i = 0; i < bc.onumel; ++i) f(i, i, i);
    return;
  }
  const int r = static_cast<int>(bc.oshape.size());
  std::vector<int> idx(r, 0);
  long ai = 0, bi = 0;
  for (int oi = 0; oi < bc.onumel; ++oi) {
    f(oi, ai, bi);
    for (int d = r - 1; d >= 0; --d) {
      ++idx[d];
      ai += bc.astride[d];
      bi += bc.bstride[d];
      if (idx[d] < bc.oshape[d]) break;
      idx[d] = 0;
      ai -= bc.astride[d] * bc.oshape[d];
      bi -= bc.bstride[d] * bc.oshape[d];
    }
  }
}

// Shared skeleton for elementwise binaries. GradA/GradB compute the local
// partial from (a, b) values; they run only on the backward pass.
template <class Fwd, class GradA, class GradB>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, Fwd fwd, GradA ga, GradB gb) {
  Bcast bc = make_bcast(a.shape(), b.shape());
  const bool track = should_record({&a, &b});
  Tensor out = make_output(bc.oshape, track, /*zero_init=*/false);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.mutable_data().data();
  bcast_iterate(bc, [&](int oi, long ai, long bi) { od[oi] = fwd(ad[ai], bd[bi]); });
  if (track) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    Tape::active().record([an, bn, on, bc, ga, gb]() {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      const double* av = an->data.data();
      const double* bv = bn->data.data();
      const bool need_a = an->requires_grad, need_b = bn->requires_grad;
      if (need_a) an->ensure_grad();
      if (need_b) bn->ensure_grad();
      bcast_iterate(bc, [&](int oi, long ai, long bi) {
        if (need_a) an->grad[ai] += g[oi] * ga(av[ai], bv[bi]);
        if (need_b) bn->grad[bi] += g[oi] * gb(av[ai], bv[bi]);
      });
    });
  }
  return out;
}

// Unary skeleton; Grad gets (input, output) values.
template <class Fwd, class Grad>
Tensor unary_elementwise(const Tensor& t, Fwd fwd, Grad grad) {
  const bool track = should_record({&t});
  Tensor out = make_output(t.shape(), track, /*zero_init=*/false);
  const double* td = t.data().data();
  double* od = out.mutable_data().data();
  const int n = t.numel();
  for (int i = 0; i < n; ++i) od[i] = fwd(td[i]);
  if (track) {
    NodePtr tn = t.node(), on = out.node();
    Tape::active().record([tn, on, grad]() {
      if (on->grad.empty() || !tn->requires_grad) return;
      tn->ensure_grad();
      const int n = static_cast<int>(tn->data.size());
      for (int i = 0; i < n; ++i) tn->grad[i] += on->grad[i] * grad(tn->data[i], on->data[i]);
    });
  }
  return out;
}

void decompose_axis(const std::vector<int>& shape, int axis, int& outer, int& n, int& inner) {
  if (axis < 0 || axis >= static_cast<int>(shape.size()))
    throw ShapeMismatch("axis out of range");
  outer = 1;
  inner = 1;
  for (int d = 0; d < axis; ++d) outer *= shape[d];
  n = shape[axis];
  for (int d = axis + 1; d < static_cast<int>(shape.size()); ++d) inner *= shape[d];
}

std::vector<int> drop_axis(const std::vector<int>& shape, int axis) {
  std::vector<int> out;
  for (int d = 0; d < static_cast<int>(shape.size()); ++d)
    if (d != axis) out.push_back(shape[d]);
  return out;
}

}  // namespace

Tensor randn(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.mutable_data()) v = rng.normal(0.0, stddev);
  return t;
}

Tensor uniform(std::vector<int> shape, Rng& rng, double lo, double hi, bool requires_grad) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data())
    if (v == 0.0) throw DomainError("div: zero divisor");
  return binary_elementwise(
      a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& t) { return scale(t, -1.0); }

Tensor abs(const Tensor& t) {
  return unary_elementwise(
      t, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& t) {
  Tensor out = unary_elementwise(
      t, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
  for (double v : out.data())
    if (!std::isfinite(v)) throw DomainError("exp: overflow to non-finite value");
  return out;
}

Tensor log(const Tensor& t) {
  for (double v : t.data())
    if (v <= 0.0) throw DomainError("log: input must be positive");
  return unary_elementwise(
      t, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& t) {
  return unary_elementwise(
      t, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& t) {
  auto fwd = [](double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
  };
  auto grad = [](double x, double) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  };
  return unary_elementwise(t, fwd, grad);
}

Tensor sigmoid(const Tensor& t) {
  auto fwd = [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  };
  return unary_elementwise(t, fwd, [](double, double y) { return y * (1.0 - y); });
}

Tensor pow(const Tensor& t, double exponent) {
  const bool integral = exponent == std::floor(exponent);
  for (double v : t.data()) {
    if (v < 0.0 && !integral) throw DomainError("pow: negative base with fractional exponent");
    if (v == 0.0 && exponent < 1.0 && exponent != 0.0)
      throw DomainError("pow: zero base with exponent < 1");
  }
  return unary_elementwise(
      t, [exponent](double x) { return std::pow(x, exponent); },
      [exponent](double x, double) { return exponent * std::pow(x, exponent - 1.0); });
}

Tensor scale(const Tensor& t, double factor) {
  return unary_elementwise(
      t, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& t, double value) {
  return unary_elementwise(
      t, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor sum(const Tensor& t) {
  const bool track = should_record({&t});
  Tensor out = make_output({}, track);
  double acc = 0.0;
  for (double v : t.data()) acc += v;
  out.mutable_data()[0] = acc;
  if (track) {
    NodePtr tn = t.node(), on = out.node();
    Tape::active().record([tn, on]() {
      if (on->grad.empty() || !tn->requires_grad) return;
      tn->ensure_grad();
      const double g = on->grad[0];
      for (double& gv : tn->grad) gv += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& t) { return scale(sum(t), 1.0 / t.numel()); }

Tensor sum_over_axis(const Tensor& t, int axis) {
  int outer, n, inner;
  decompose_axis(t.shape(), axis, outer, n, inner);
  const bool track = should_record({&t});
  Tensor out = make_output(drop_axis(t.shape(), axis), track);
  const double* td = t.data().data();
  double* od = out.mutable_data().data();
  for (int o = 0; o < outer; ++o)
    for (int i = 0; i < n; ++i) {
      const double* src = td + (static_cast<long>(o) * n + i) * inner;
      double* dst = od + static_cast<long>(o) * inner;
      for (int j = 0; j < inner; ++j) dst[j] += src[j];
    }
  if (track) {
    NodePtr tn = t.node(), on = out.node();
    Tape::active().record([tn, on, outer, n, inner]() {
      if (on->grad.empty() || !tn->requires_grad) return;
      tn->ensure_grad();
      for (int o = 0; o < outer; ++o)
        for (int i = 0; i < n; ++i) {
          double* dst = tn->grad.data() + (static_cast<long>(o) * n + i) * inner;
          const double* src = on->grad.data() + static_cast<long>(o) * inner;
          for (int j = 0; j < inner; ++j) dst[j] += src[j];
        }
    });
  }
  return out;
}

Tensor min_over_axis(const Tensor& t, int axis) {
  int outer, n, inner;
  decompose_axis(t.shape(), axis, outer, n, inner);
  const bool track = should_record({&t});
  Tensor out = make_output(drop_axis(t.shape(), axis), track, /*zero_init=*/false);
  std::vector<long> argmin(static_cast<std::size_t>(outer) * inner);
  const double* td = t.data().data();
  double* od = out.mutable_data().data();
  for (int o = 0; o < outer; ++o)
    for (int j = 0; j < inner; ++j) {
      long best = (static_cast<long>(o) * n) * inner + j;
      double bv = td[best];
      for (int i = 1; i < n; ++i) {
        const long k = (static_cast<long>(o) * n + i) * inner + j;
        if (td[k] < bv) {
          bv = td[k];
          best = k;
        }
      }
      od[static_cast<long>(o) * inner + j] = bv;
      argmin[static_cast<std::size_t>(o) * inner + j] = best;
    }
  if (track) {
    NodePtr tn = t.node(), on = out.node();
    Tape::active().record([tn, on, argmin = std::move(argmin)]() {
      if (on->grad.empty() || !tn->requires_grad) return;
      tn->ensure_grad();
      for (std::size_t i = 0; i < argmin.size(); ++i) tn->grad[argmin[i]] += on->grad[i];
    });
  }
  return out;
}

Tensor softmax(const Tensor& t, int axis) {
  int outer, n, inner;
  decompose_axis(t.shape(), axis, outer, n, inner);
  const bool track = should_record({&t});
  Tensor out = make_output(t.shape(), track, /*zero_init=*/false);
  const double* td = t.data().data();
  double* od = out.mutable_data().data();
  for (int o = 0; o < outer; ++o)
    for (int j = 0; j < inner; ++j) {
      const long base = static_cast<long>(o) * n * inner + j;
      double mx = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i) mx = std::max(mx, td[base + static_cast<long>(i) * inner]);
      double z = 0.0;
      for (int i = 0; i < n; ++i) {
        const double e = std::exp(td[base + static_cast<long>(i) * inner] - mx);
        od[base + static_cast<long>(i) * inner] = e;
        z += e;
      }
      for (int i = 0; i < n; ++i) od[base + static_cast<long>(i) * inner] /= z;
    }
  if (track) {
    NodePtr tn = t.node(), on = out.node();
    Tape::active().record([tn, on, outer, n, inner]() {
      if (on->grad.empty() || !tn->requires_grad) return;
      tn->ensure_grad();
      const double* s = on->data.data();
      const double* g = on->grad.data();
      for (int o = 0; o < outer; ++o)
        for (int j = 0; j < inner; ++j) {
          const long base = static_cast<long>(o) * n * inner + j;
          double dot = 0.0;
          for (int i = 0; i < n; ++i) {
            const long k = base + static_cast<long>(i) * inner;
            dot += g[k] * s[k];
          }
          for (int i = 0; i < n; ++i) {
            const long k = base + static_cast<long>(i) * inner;
            tn->grad[k] += s[k] * (g[k] - dot);
          }
        }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeMismatch("matmul: operands must be rank-2");
  const int m = a.shape()[0], k = a.shape()[1];
  const int kb = b.shape()[0], n = b.shape()[1];
  if (k != kb)
    throw ShapeMismatch("matmul: inner dims differ (" + std::to_string(k) + " vs " +
                        std::to_string(kb) + ")");
  const bool track = should_record({&a, &b});
  Tensor out = make_output({m, n}, track, /*zero_init=*/false);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.mutable_data().data();
  for (int i = 0; i < m; ++i) {
    double* orow = od + static_cast<long>(i) * n;
    {
      const double av = ad[static_cast<long>(i) * k];
      for (int j = 0; j < n; ++j) orow[j] = av * bd[j];
    }
    for (int kk = 1; kk < k; ++kk) {
      const double av = ad[static_cast<long>(i) * k + kk];
      const double* brow = bd + static_cast<long>(kk) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  if (track) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    Tape::active().record([an, bn, on, m, k, n]() {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        // dA = dC · Bᵀ
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            const double* grow = g + static_cast<long>(i) * n;
            const double* brow = bn->data.data() + static_cast<long>(kk) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            an->grad[static_cast<long>(i) * k + kk] += acc;
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        // dB = Aᵀ · dC
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            const double av = an->data[static_cast<long>(i) * k + kk];
            const double* grow = g + static_cast<long>(i) * n;
            double* brow = bn->grad.data() + static_cast<long>(kk) * n;
            for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
      }
    });
  }
  return out;
}

Tensor gather(const Tensor& t, const std::vector<std::int64_t>& indices) {
  const int n = t.numel();
  for (std::int64_t idx : indices)
    if (idx < 0 || idx >= n) throw DomainError("gather: index out of range");
  const bool track = should_record({&t});
  Tensor out = make_output({static_cast<int>(indices.size())}, track, /*zero_init=*/false);
  double* od = out.mutable_data().data();
  const double* td = t.data().data();
  for (std::size_t i = 0; i < indices.size(); ++i) od[i] = td[indices[i]];
  if (track) {
    NodePtr tn = t.node(), on = out.node();
    Tape::active().record([tn, on, indices]() {
      if (on->grad.empty() || !tn->requires_grad) return;
      tn->ensure_grad();
      for (std::size_t i = 0; i < indices.size(); ++i) tn->grad[indices[i]] += on->grad[i];
    });
  }
  return out;
}

Tensor scatter_add(const Tensor& src, const std::vector<std::int64_t>& indices, int out_numel) {
  if (static_cast<std::size_t>(src.numel()) != indices.size())
    throw ShapeMismatch("scatter_add: src length must match index count");
  for (std::int64_t idx : indices)
    if (idx < 0 || idx >= out_numel) throw DomainError("scatter_add: index out of range");
  const bool track = should_record({&src});
  Tensor out = make_output({out_numel}, track);
  double* od = out.mutable_data().data();
  const double* sd = src.data().data();
  for (std::size_t i = 0; i < indices.size(); ++i) od[indices[i]] += sd[i];
  if (track) {
    NodePtr sn = src.node(), on = out.node();
    Tape::active().record([sn, on, indices]() {
      if (on->grad.empty() || !sn->requires_grad) return;
      sn->ensure_grad();
      for (std::size_t i = 0; i < indices.size(); ++i) sn->grad[i] += on->grad[indices[i]];
    });
  }
  return out;
}

Tensor reshape(const Tensor& t, std::vector<int> shape) {
  if (numel_of(shape) != t.numel()) throw ShapeMismatch("reshape: element count mismatch");
  const bool track = should_record({&t});
  Tensor out = make_output(std::move(shape), track, /*zero_init=*/false);
  out.mutable_data() = t.data();
  if (track) {
    NodePtr tn = t.node(), on = out.node();
    Tape::active().record([tn, on]() {
      if (on->grad.empty() || !tn->requires_grad) return;
      tn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) tn->grad[i] += on->grad[i];
    });
  }
  return out;
}

Tensor strided_slice(const Tensor& t, int start, int stride, int count) {
  if (stride <= 0 || count <= 0 || start < 0 ||
      start + static_cast<long>(count - 1) * stride >= t.numel())
    throw ShapeMismatch("strided_slice: out of range");
  const bool track = should_record({&t});
  Tensor out = make_output({count}, track, /*zero_init=*/false);
  double* od = out.mutable_data().data();
  const double* td = t.data().data();
  for (int i = 0; i < count; ++i) od[i] = td[start + static_cast<long>(i) * stride];
  if (track) {
    NodePtr tn = t.node(), on = out.node();
    Tape::active().record([tn, on, start, stride, count]() {
      if (on->grad.empty() || !tn->requires_grad) return;
      tn->ensure_grad();
      for (int i = 0; i < count; ++i)
        tn->grad[start + static_cast<long>(i) * stride] += on->grad[i];
    });
  }
  return out;
}

Tensor transpose2d(const Tensor& t) {
  if (t.rank() != 2) throw ShapeMismatch("transpose2d: rank-2 required");
  const int m = t.shape()[0], n = t.shape()[1];
  const bool track = should_record({&t});
  Tensor out = make_output({n, m}, track, /*zero_init=*/false);
  const double* td = t.data().data();
  double* od = out.mutable_data().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) od[static_cast<long>(j) * m + i] = td[static_cast<long>(i) * n + j];
  if (track) {
    NodePtr tn = t.node(), on = out.node();
    Tape::active().record([tn, on, m, n]() {
      if (on->grad.empty() || !tn->requires_grad) return;
      tn->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          tn->grad[static_cast<long>(i) * n + j] += on->grad[static_cast<long>(j) * m + i];
    });
  }
  return out;
}

Tensor stack0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("stack0: empty input");
  const std::vector<int>& base = parts[0].shape();
  for (const Tensor& p : parts)
    if (p.shape() != base) throw ShapeMismatch("stack0: shapes differ");
  std::vector<const Tensor*> ptrs;
  for (const Tensor& p : parts) ptrs.push_back(&p);
  const bool track = should_record(ptrs);
  std::vector<int> oshape;
  oshape.push_back(static_cast<int>(parts.size()));
  oshape.insert(oshape.end(), base.begin(), base.end());
  Tensor out = make_output(std::move(oshape), track, /*zero_init=*/false);
  const int chunk = parts[0].numel();
  double* od = out.mutable_data().data();
  for (std::size_t p = 0; p < parts.size(); ++p)
    std::copy(parts[p].data().begin(), parts[p].data().end(), od + p * chunk);
  if (track) {
    std::vector<NodePtr> ns;
    for (const Tensor& p : parts) ns.push_back(p.node());
    NodePtr on = out.node();
    Tape::active().record([ns, on, chunk]() {
      if (on->grad.empty()) return;
      for (std::size_t p = 0; p < ns.size(); ++p) {
        if (!ns[p]->requires_grad) continue;
        ns[p]->ensure_grad();
        const double* g = on->grad.data() + p * chunk;
        for (int i = 0; i < chunk; ++i) ns[p]->grad[i] += g[i];
      }
    });
  }
  return out;
}

Tensor pack_columns(const std::vector<Tensor>& cols) {
  if (cols.empty()) throw ShapeMismatch("pack_columns: empty input");
  const int n = cols[0].numel();
  for (const Tensor& c : cols)
    if (c.rank() != 1 || c.numel() != n) throw ShapeMismatch("pack_columns: rank-1 equal length");
  std::vector<const Tensor*> ptrs;
  for (const Tensor& c : cols) ptrs.push_back(&c);
  const bool track = should_record(ptrs);
  const int k = static_cast<int>(cols.size());
  Tensor out = make_output({n, k}, track, /*zero_init=*/false);
  double* od = out.mutable_data().data();
  for (int c = 0; c < k; ++c) {
    const double* cd = cols[c].data().data();
    for (int i = 0; i < n; ++i) od[static_cast<long>(i) * k + c] = cd[i];
  }
  if (track) {
    std::vector<NodePtr> ns;
    for (const Tensor& c : cols) ns.push_back(c.node());
    NodePtr on = out.node();
    Tape::active().record([ns, on, n, k]() {
      if (on->grad.empty()) return;
      for (int c = 0; c < k; ++c) {
        if (!ns[c]->requires_grad) continue;
        ns[c]->ensure_grad();
        for (int i = 0; i < n; ++i) ns[c]->grad[i] += on->grad[static_cast<long>(i) * k + c];
      }
    });
  }
  return out;
}

Tensor unpack_column(const Tensor& t, int column) {
  if (t.rank() != 2) throw ShapeMismatch("unpack_column: rank-2 required");
  const int k = t.shape()[1];
  if (column < 0 || column >= k) throw ShapeMismatch("unpack_column: column out of range");
  return strided_slice(t, column, k, t.shape()[0]);
}

Tensor repeat_rows(const Tensor& t, int times) {
  if (t.rank() != 2) throw ShapeMismatch("repeat_rows: rank-2 required");
  if (times < 1) throw ShapeMismatch("repeat_rows: times must be >= 1");
  const int n = t.shape()[0], c = t.shape()[1];
  const bool track = should_record({&t});
  Tensor out = make_output({n * times, c}, track, /*zero_init=*/false);
  const double* td = t.data().data();
  double* od = out.mutable_data().data();
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < times; ++r)
      std::copy(td + static_cast<long>(i) * c, td + static_cast<long>(i + 1) * c,
                od + (static_cast<long>(i) * times + r) * c);
  if (track) {
    NodePtr tn = t.node(), on = out.node();
    Tape::active().record([tn, on, n, c, times]() {
      if (on->grad.empty() || !tn->requires_grad) return;
      tn->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int r = 0; r < times; ++r) {
          const double* g = on->grad.data() + (static_cast<long>(i) * times + r) * c;
          double* dst = tn->grad.data() + static_cast<long>(i) * c;
          for (int j = 0; j < c; ++j) dst[j] += g[j];
        }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& t, std::vector<int> rows) {
  if (t.rank() != 2) throw ShapeMismatch("gather_rows: rank-2 required");
  const int n = t.shape()[0], c = t.shape()[1];
  for (int r : rows)
    if (r < 0 || r >= n) throw DomainError("gather_rows: row index out of range");
  const bool track = should_record({&t});
  Tensor out = make_output({static_cast<int>(rows.size()), c}, track, /*zero_init=*/false);
  const double* td = t.data().data();
  double* od = out.mutable_data().data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(td + static_cast<long>(rows[i]) * c, td + static_cast<long>(rows[i] + 1) * c,
              od + static_cast<long>(i) * c);
  if (track) {
    NodePtr tn = t.node(), on = out.node();
    Tape::active().record([tn, on, c, rows = std::move(rows)]() {
      if (on->grad.empty() || !tn->requires_grad) return;
      tn->ensure_grad();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const double* g = on->grad.data() + static_cast<long>(i) * c;
        double* dst = tn->grad.data() + static_cast<long>(rows[i]) * c;
        for (int j = 0; j < c; ++j) dst[j] += g[j];
      }
    });
  }
  return out;
}

Tensor upsample_nearest2d(const Tensor& t, int factor) {
  if (t.rank() != 2) throw ShapeMismatch("upsample_nearest2d: rank-2 required");
  if (factor < 1) throw ShapeMismatch("upsample_nearest2d: factor must be >= 1");
  const int h = t.shape()[0], w = t.shape()[1];
  const int ho = h * factor, wo = w * factor;
  const bool track = should_record({&t});
  Tensor out = make_output({ho, wo}, track, /*zero_init=*/false);
  const double* td = t.data().data();
  double* od = out.mutable_data().data();
  for (int y = 0; y < ho; ++y) {
    const double* src = td + static_cast<long>(y / factor) * w;
    double* dst = od + static_cast<long>(y) * wo;
    for (int x = 0; x < wo; ++x) dst[x] = src[x / factor];
  }
  if (track) {
    NodePtr tn = t.node(), on = out.node();
    Tape::active().record([tn, on, h, w, factor]() {
      if (on->grad.empty() || !tn->requires_grad) return;
      tn->ensure_grad();
      const int wo = w * factor;
      for (int y = 0; y < h * factor; ++y) {
        double* dst = tn->grad.data() + static_cast<long>(y / factor) * w;
        const double* g = on->grad.data() + static_cast<long>(y) * wo;
        for (int x = 0; x < wo; ++x) dst[x / factor] += g[x];
      }
    });
  }
  return out;
}

SampleResult bilinear_sample(const Tensor& img, const Tensor& coords) {
  if (img.rank() != 3) throw ShapeMismatch("bilinear_sample: img must be [C×H×W]");
  if (coords.rank() != 2 || coords.shape()[1] != 2)
    throw ShapeMismatch("bilinear_sample: coords must be [N×2]");
  const int C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
  const int N = coords.shape()[0];
  const bool track = should_record({&img, &coords});
  Tensor out = make_output({N, C}, track);
  std::vector<std::uint8_t> valid(N, 1);
  const double* im = img.data().data();
  const double* cd = coords.data().data();
  double* od = out.mutable_data().data();

  auto pixel = [&](int c, int y, int x) -> double {
    if (x < 0 || x >= W || y < 0 || y >= H) return 0.0;
    return im[(static_cast<long>(c) * H + y) * W + x];
  };

  for (int n = 0; n < N; ++n) {
    const double u = cd[2 * n], v = cd[2 * n + 1];
    if (u < -1.0 || u > W || v < -1.0 || v > H) {
      valid[n] = 0;
      continue;  // output stays 0
    }
    const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
    const double fx = u - x0, fy = v - y0;
    const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
    const double w01 = (1 - fx) * fy, w11 = fx * fy;
    for (int c = 0; c < C; ++c) {
      od[static_cast<long>(n) * C + c] = w00 * pixel(c, y0, x0) + w10 * pixel(c, y0, x0 + 1) +
                                         w01 * pixel(c, y0 + 1, x0) +
                                         w11 * pixel(c, y0 + 1, x0 + 1);
    }
  }

  if (track) {
    NodePtr in = img.node(), cn = coords.node(), on = out.node();
    Tape::active().record([in, cn, on, C, H, W, N]() {
      if (on->grad.empty()) return;
      const bool need_img = in->requires_grad, need_coords = cn->requires_grad;
      if (!need_img && !need_coords) return;
      if (need_img) in->ensure_grad();
      if (need_coords) cn->ensure_grad();
      const double* g = on->grad.data();
      const double* cd = cn->data.data();
      const double* im = in->data.data();
      auto inb = [&](int y, int x) { return x >= 0 && x < W && y >= 0 && y < H; };
      for (int n = 0; n < N; ++n) {
        const double u = cd[2 * n], v = cd[2 * n + 1];
        if (u < -1.0 || u > W || v < -1.0 || v > H) continue;
        const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
        const double fx = u - x0, fy = v - y0;
        const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
        const double w01 = (1 - fx) * fy, w11 = fx * fy;
        double du = 0.0, dv = 0.0;
        for (int c = 0; c < C; ++c) {
          const double go = g[static_cast<long>(n) * C + c];
          if (go == 0.0) continue;
          const long base = static_cast<long>(c) * H;
          double p00 = 0, p10 = 0, p01 = 0, p11 = 0;
          if (inb(y0, x0)) {
            p00 = im[(base + y0) * W + x0];
            if (need_img) in->grad[(base + y0) * W + x0] += go * w00;
          }
          if (inb(y0, x0 + 1)) {
            p10 = im[(base + y0) * W + x0 + 1];
            if (need_img) in->grad[(base + y0) * W + x0 + 1] += go * w10;
          }
          if (inb(y0 + 1, x0)) {
            p01 = im[(base + y0 + 1) * W + x0];
            if (need_img) in->grad[(base + y0 + 1) * W + x0] += go * w01;
          }
          if (inb(y0 + 1, x0 + 1)) {
            p11 = im[(base + y0 + 1) * W + x0 + 1];
            if (need_img) in->grad[(base + y0 + 1) * W + x0 + 1] += go * w11;
          }
          if (need_coords) {
            du += go * ((1 - fy) * (p10 - p00) + fy * (p11 - p01));
            dv += go * ((1 - fx) * (p01 - p00) + fx * (p11 - p10));
          }
        }
        if (need_coords) {
          cn->grad[2 * n] += du;
          cn->grad[2 * n + 1] += dv;
        }
      }
    });
  }
  return {out, std::move(valid)};
}

SampleResult trilinear_sample(const Tensor& grid, const std::vector<double>& points) {
  if (grid.rank() != 4) throw ShapeMismatch("trilinear_sample: grid must be [C×X×Y×Z]");
  if (points.size() % 3 != 0) throw ShapeMismatch("trilinear_sample: points must be 3N flat");
  const int C = grid.shape()[0], X = grid.shape()[1], Y = grid.shape()[2], Z = grid.shape()[3];
  const int N = static_cast<int>(points.size() / 3);
  const bool track = should_record({&grid});
  Tensor out = make_output({N, C}, track);
  std::vector<std::uint8_t> valid(N, 0);
  const double* gd = grid.data().data();
  double* od = out.mutable_data().data();

  auto cell = [&](int c, int ix, int iy, int iz) -> double {
    if (ix < 0 || ix >= X || iy < 0 || iy >= Y || iz < 0 || iz >= Z) return 0.0;
    return gd[((static_cast<long>(c) * X + ix) * Y + iy) * Z + iz];
  };

  for (int n = 0; n < N; ++n) {
    const double cx = points[3 * n], cy = points[3 * n + 1], cz = points[3 * n + 2];
    valid[n] = (cx >= 0.0 && cx <= X - 1 && cy >= 0.0 && cy <= Y - 1 && cz >= 0.0 && cz <= Z - 1)
                   ? 1
                   : 0;
    if (cx < -1.0 || cx > X || cy < -1.0 || cy > Y || cz < -1.0 || cz > Z) continue;
    const int x0 = static_cast<int>(std::floor(cx));
    const int y0 = static_cast<int>(std::floor(cy));
    const int z0 = static_cast<int>(std::floor(cz));
    const double fx = cx - x0, fy = cy - y0, fz = cz - z0;
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int dx = 0; dx < 2; ++dx)
        for (int dy = 0; dy < 2; ++dy)
          for (int dz = 0; dz < 2; ++dz) {
            const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
            if (w != 0.0) acc += w * cell(c, x0 + dx, y0 + dy, z0 + dz);
          }
      od[static_cast<long>(n) * C + c] = acc;
    }
  }

  if (track) {
    NodePtr gn = grid.node(), on = out.node();
    Tape::active().record([gn, on, points, C, X, Y, Z, N]() {
      if (on->grad.empty() || !gn->requires_grad) return;
      gn->ensure_grad();
      const double* g = on->grad.data();
      for (int n = 0; n < N; ++n) {
        const double cx = points[3 * n], cy = points[3 * n + 1], cz = points[3 * n + 2];
        if (cx < -1.0 || cx > X || cy < -1.0 || cy > Y || cz < -1.0 || cz > Z) continue;
        const int x0 = static_cast<int>(std::floor(cx));
        const int y0 = static_cast<int>(std::floor(cy));
        const int z0 = static_cast<int>(std::floor(cz));
        const double fx = cx - x0, fy = cy - y0, fz = cz - z0;
        for (int c = 0; c < C; ++c) {
          const double go = g[static_cast<long>(n) * C + c];
          if (go == 0.0) continue;
          for (int dx = 0; dx < 2; ++dx)
            for (int dy = 0; dy < 2; ++dy)
              for (int dz = 0; dz < 2; ++dz) {
                const int ix = x0 + dx, iy = y0 + dy, iz = z0 + dz;
                if (ix < 0 || ix >= X || iy < 0 || iy >= Y || iz < 0 || iz >= Z) continue;
                const double w =
                    (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
                if (w != 0.0)
                  gn->grad[((static_cast<long>(c) * X + ix) * Y + iy) * Z + iz] += go * w;
              }
        }
      }
    });
  }
  return {out, std::move(valid)};
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int pad) {
  if (input.rank() != 3) throw ShapeMismatch("conv2d: input must be [Cin×H×W]");
  if (weight.rank() != 4) throw ShapeMismatch("conv2d: weight must be [Cout×Cin×kh×kw]");
  const int Cin = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  const int Cout = weight.shape()[0], kh = weight.shape()[2], kw = weight.shape()[3];
  if (weight.shape()[1] != Cin) throw ShapeMismatch("conv2d: channel mismatch");
  if (bias.rank() != 1 || bias.shape()[0] != Cout) throw ShapeMismatch("conv2d: bad bias");
  if (stride < 1 || pad < 0) throw ShapeMismatch("conv2d: bad stride/pad");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeMismatch("conv2d: empty output");

  const bool track = should_record({&input, &weight, &bias});
  Tensor out = make_output({Cout, Ho, Wo}, track, /*zero_init=*/false);
  const double* in = input.data().data();
  const double* wt = weight.data().data();
  const double* bs = bias.data().data();
  double* od = out.mutable_data().data();

  for (int co = 0; co < Cout; ++co) {
    for (int oy = 0; oy < Ho; ++oy) {
      double* orow = od + (static_cast<long>(co) * Ho + oy) * Wo;
      for (int ox = 0; ox < Wo; ++ox) orow[ox] = bs[co];
      for (int ci = 0; ci < Cin; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          const double* irow = in + (static_cast<long>(ci) * H + iy) * W;
          const double* wrow = wt + ((static_cast<long>(co) * Cin + ci) * kh + ky) * kw;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix0 = ox * stride - pad;
            double acc = 0.0;
            const int kx_lo = std::max(0, -ix0);
            const int kx_hi = std::min(kw, W - ix0);
            for (int kx = kx_lo; kx < kx_hi; ++kx) acc += wrow[kx] * irow[ix0 + kx];
            orow[ox] += acc;
          }
        }
      }
    }
  }

  if (track) {
    NodePtr xn = input.node(), wn = weight.node(), bn = bias.node(), on = out.node();
    Tape::active().record([xn, wn, bn, on, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo]() {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int co = 0; co < Cout; ++co) {
          double acc = 0.0;
          const double* gp = g + static_cast<long>(co) * Ho * Wo;
          for (int i = 0; i < Ho * Wo; ++i) acc += gp[i];
          bn->grad[co] += acc;
        }
      }
      const bool need_x = xn->requires_grad, need_w = wn->requires_grad;
      if (!need_x && !need_w) return;
      if (need_x) xn->ensure_grad();
      if (need_w) wn->ensure_grad();
      const double* in = xn->data.data();
      const double* wt = wn->data.data();
      for (int co = 0; co < Cout; ++co) {
        for (int ci = 0; ci < Cin; ++ci) {
          for (int ky = 0; ky < kh; ++ky) {
            const double* wrow = wt + ((static_cast<long>(co) * Cin + ci) * kh + ky) * kw;
            double* dwrow =
                need_w ? wn->grad.data() + ((static_cast<long>(co) * Cin + ci) * kh + ky) * kw
                       : nullptr;
            for (int oy = 0; oy < Ho; ++oy) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= H) continue;
              const double* grow = g + (static_cast<long>(co) * Ho + oy) * Wo;
              const double* irow = in + (static_cast<long>(ci) * H + iy) * W;
              double* dirow =
                  need_x ? xn->grad.data() + (static_cast<long>(ci) * H + iy) * W : nullptr;
              for (int ox = 0; ox < Wo; ++ox) {
                const double go = grow[ox];
                if (go == 0.0) continue;
                const int ix0 = ox * stride - pad;
                const int kx_lo = std::max(0, -ix0);
                const int kx_hi = std::min(kw, W - ix0);
                for (int kx = kx_lo; kx < kx_hi; ++kx) {
                  if (need_w) dwrow[kx] += go * irow[ix0 + kx];
                  if (need_x) dirow[ix0 + kx] += go * wrow[kx];
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace bevforge
