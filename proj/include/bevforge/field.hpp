#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "bevforge/camera.hpp"
#include "bevforge/ops.hpp"
#include "bevforge/tensor.hpp"

namespace bevforge {

enum class AlphaFormula {
  kStandard,             // alpha = 1 - exp(-sigma*delta)
  kPaperLiteralClamped,  // alpha = min(exp(1 - sigma*delta), 1)
};

AlphaFormula alpha_formula_from_string(const std::string& name);

// Three-stage strided conv encoder (stride 2, 2, 1; kernel 3; pad 1) mapping
// [3×H×W] to [F×ceil(H/4)×ceil(W/4)]. Feature cell (i, j) corresponds to image
// pixel (4i, 4j); the /4 coordinate mapping is used by every consumer.
struct FeatureEncoder {
  std::array<int, 3> channels{12, 24, 24};
  Tensor w1, b1, w2, b2, w3, b3;

  static FeatureEncoder create(const std::array<int, 3>& channels, Rng& rng);
  Tensor encode(const Tensor& image) const;
  int feature_dim() const { return channels[2]; }
  std::vector<Tensor> params();
};

inline constexpr int kFeatureStride = 4;

// Sinusoidal positional encoding over (u, v, d), all pre-normalized to [0,1]:
// [sin(2^l*pi*x), cos(2^l*pi*x)] for l = 0..bands-1 per scalar, 6*bands total.
std::vector<double> positional_encoding(double u, double v, double d, int bands);

// Two-layer MLP density head. The first layer weight is split into a feature
// block and an encoding block so callers never materialize the concatenated
// input: h = relu(f·w1_feat + enc·w1_enc + b1), sigma = softplus(h·w2 + b2).
struct FieldModel {
  int pe_bands = 6;
  int feature_dim = 24;
  int hidden = 32;
  double d_max = 40.0;  // distance normalization for the encoding
  Tensor w1_feat, w1_enc, b1, w2, b2;

  static FieldModel create(int feature_dim, int pe_bands, int hidden, double d_max, Rng& rng);
  std::vector<Tensor> params();

  // sigma = softplus(phi(features, encodings)); rows must align.
  Tensor density(const Tensor& features /*[N×F]*/, const Tensor& encodings /*[N×6L]*/) const;
};

// Samples along camera rays through a fixed pixel list. Distances are
// Euclidean along the unit ray direction; z-depth = distance * cos_theta.
struct RaySamples {
  int num_rays = 0;
  int k = 0;
  double d_min = 0, d_max = 0;
  std::vector<double> pixels;     // 2R (u, v) full-resolution image coords
  std::vector<double> dirs;       // 3R unit directions, camera frame
  std::vector<double> cos_theta;  // R
  std::vector<double> dist;       // R*k ray-major, strictly increasing per ray
  std::vector<double> delta;      // R*k; delta[k-1] = delta[k-2]
  Tensor sigma;                   // [R*k] after eval_density
  std::vector<Tensor> alpha;      // k × [R] after compositing
  std::vector<Tensor> weights;    // k × [R]
};

// Stratified sampling: distance i drawn uniformly from the i-th of k equal
// bins; jitter disabled (nullopt seed) puts samples at bin midpoints.
RaySamples sample_rays(const CameraIntrinsics& K, const std::vector<Vec2>& pixels, int k,
                       double d_min, double d_max, std::optional<std::uint64_t> jitter_seed);

// Fills samples.sigma from the feature map: features are bilinearly sampled
// once per ray at pixel/stride coords, repeated across the k samples, and
// combined with per-sample positional encodings.
void eval_density(const FieldModel& model, const Tensor& feat_map, const CameraIntrinsics& K,
                  RaySamples& samples);

struct CompositeResult {
  Tensor depth;  // [R] expected ray-termination distance (Euclidean)
  Tensor wsum;   // [R] total termination probability
};

// Emission-absorption compositing of sigma into per-ray depth. Weights are
// not renormalized; empty rays composite toward zero depth.
CompositeResult composite_depth(RaySamples& samples,
                                AlphaFormula formula = AlphaFormula::kStandard);

// Positional encoding matrix for arbitrary (pixel, distance) pairs; rows
// follow the inputs. Plain data, never on the tape.
Tensor encoding_matrix(const CameraIntrinsics& K, const std::vector<double>& pixels_uv,
                       const std::vector<double>& dists, int bands, double d_max);

}  // namespace bevforge
