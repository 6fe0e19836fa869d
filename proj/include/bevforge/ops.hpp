#pragma once

#include <cstdint>
#include <vector>

#include "bevforge/rng.hpp"
#include "bevforge/tensor.hpp"

namespace bevforge {

// Leaf initializers (never recorded on the tape).
Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
Tensor uniform(std::vector<int> shape, Rng& rng, double lo, double hi,
               bool requires_grad = false);

// Elementwise binary ops with right-aligned broadcasting (dims equal or 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // DomainError on zero divisor

// Elementwise unary.
Tensor neg(const Tensor& t);
Tensor abs(const Tensor& t);
Tensor exp(const Tensor& t);  // DomainError on overflow to inf
Tensor log(const Tensor& t);  // DomainError unless all inputs > 0
Tensor relu(const Tensor& t);
Tensor softplus(const Tensor& t);
Tensor sigmoid(const Tensor& t);
Tensor pow(const Tensor& t, double exponent);
Tensor scale(const Tensor& t, double factor);
Tensor add_scalar(const Tensor& t, double value);

// Reductions.
Tensor sum(const Tensor& t);   // rank-0
Tensor mean(const Tensor& t);  // rank-0
Tensor sum_over_axis(const Tensor& t, int axis);
Tensor min_over_axis(const Tensor& t, int axis);  // ties resolve to first index

Tensor softmax(const Tensor& t, int axis);

// matmul(a[m×k], b[k×n]) -> [m×n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Flat-index gather / scatter-add (rank-1 results, duplicate indices allowed).
Tensor gather(const Tensor& t, const std::vector<std::int64_t>& indices);
Tensor scatter_add(const Tensor& src, const std::vector<std::int64_t>& indices, int out_numel);

// Structural ops.
Tensor reshape(const Tensor& t, std::vector<int> shape);
Tensor strided_slice(const Tensor& t, int start, int stride, int count);  // rank-1
Tensor transpose2d(const Tensor& t);
Tensor stack0(const std::vector<Tensor>& parts);     // new leading axis
Tensor pack_columns(const std::vector<Tensor>& cols);  // k rank-1 [N] -> [N×k]
Tensor unpack_column(const Tensor& t, int column);     // [N×k] -> [N]
Tensor repeat_rows(const Tensor& t, int times);        // [N×C] -> [N*times×C], row-interleaved
Tensor gather_rows(const Tensor& t, std::vector<int> rows);  // [N×C] -> [len(rows)×C]
Tensor upsample_nearest2d(const Tensor& t, int factor);      // [H×W] -> [H*f×W*f]

// Bilinear sampling of img[C×H×W] at continuous pixel coords[N×2] = (u=x, v=y),
// pixel centers at integer coordinates, zero padding outside. valid[n] is false
// only when (u,v) lies fully outside [-1, W]×[-1, H]. Gradients flow to both
// img and coords.
struct SampleResult {
  Tensor values;  // [N×C]
  std::vector<std::uint8_t> valid;
};
SampleResult bilinear_sample(const Tensor& img, const Tensor& coords);

// Trilinear sampling of grid[C×X×Y×Z] at continuous cell coords (3N flat,
// (cx, cy, cz) per point, cell centers at integers). Zero padding outside;
// valid[n] means the point lies inside [0, dim-1] on every axis. Gradients
// flow to grid only (points are geometry, not parameters).
SampleResult trilinear_sample(const Tensor& grid, const std::vector<double>& points);

// conv2d(input[Cin×H×W], weight[Cout×Cin×kh×kw], bias[Cout]) with zero padding.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int pad);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace bevforge
