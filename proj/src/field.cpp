#include "bevforge/field.hpp"

#include <cmath>

namespace bevforge {

AlphaFormula alpha_formula_from_string(const std::string& name) {
  if (name == "standard") return AlphaFormula::kStandard;
  if (name == "paper_literal_clamped") return AlphaFormula::kPaperLiteralClamped;
  throw ConfigError("unknown alpha_formula: " + name);
}

FeatureEncoder FeatureEncoder::create(const std::array<int, 3>& ch, Rng& rng) {
  FeatureEncoder e;
  e.channels = ch;
  auto he = [&](int cout, int cin) {
    return randn({cout, cin, 3, 3}, rng, std::sqrt(2.0 / (cin * 9)), true);
  };
  e.w1 = he(ch[0], 3);
  e.b1 = Tensor::zeros({ch[0]}, true);
  e.w2 = he(ch[1], ch[0]);
  e.b2 = Tensor::zeros({ch[1]}, true);
  e.w3 = he(ch[2], ch[1]);
  e.b3 = Tensor::zeros({ch[2]}, true);
  return e;
}

Tensor FeatureEncoder::encode(const Tensor& image) const {
  Tensor s1 = relu(conv2d(image, w1, b1, 2, 1));
  Tensor s2 = relu(conv2d(s1, w2, b2, 2, 1));
  return relu(conv2d(s2, w3, b3, 1, 1));
}

std::vector<Tensor> FeatureEncoder::params() { return {w1, b1, w2, b2, w3, b3}; }

std::vector<double> positional_encoding(double u, double v, double d, int bands) {
  std::vector<double> out;
  out.reserve(6 * bands);
  const double scalars[3] = {u, v, d};
  for (double x : scalars) {
    // frequency ladder 2^l * pi * x via the double-angle recurrence
    double s = std::sin(M_PI * x), c = std::cos(M_PI * x);
    for (int l = 0; l < bands; ++l) {
      out.push_back(s);
      out.push_back(c);
      const double s2 = 2.0 * s * c;
      c = c * c - s * s;
      s = s2;
    }
  }
  return out;
}

FieldModel FieldModel::create(int feature_dim, int pe_bands, int hidden, double d_max, Rng& rng) {
  FieldModel m;
  m.pe_bands = pe_bands;
  m.feature_dim = feature_dim;
  m.hidden = hidden;
  m.d_max = d_max;
  const int enc_dim = 6 * pe_bands;
  m.w1_feat = randn({feature_dim, hidden}, rng, std::sqrt(2.0 / (feature_dim + enc_dim)), true);
  m.w1_enc = randn({enc_dim, hidden}, rng, std::sqrt(2.0 / (feature_dim + enc_dim)), true);
  m.b1 = Tensor::zeros({hidden}, true);
  m.w2 = randn({hidden, 1}, rng, std::sqrt(2.0 / hidden), true);
  // start with a mean free path on the order of the sampling range rather
  // than terminating every ray within the first couple of meters
  m.b2 = Tensor::full({1}, -2.0, true);
  return m;
}

std::vector<Tensor> FieldModel::params() { return {w1_feat, w1_enc, b1, w2, b2}; }

Tensor FieldModel::density(const Tensor& features, const Tensor& encodings) const {
  if (features.rank() != 2 || encodings.rank() != 2 ||
      features.shape()[0] != encodings.shape()[0])
    throw ShapeMismatch("density: feature/encoding rows must align");
  if (features.shape()[1] != feature_dim || encodings.shape()[1] != 6 * pe_bands)
    throw ShapeMismatch("density: unexpected input widths");
  Tensor h = relu(add(add(matmul(features, w1_feat), matmul(encodings, w1_enc)), b1));
  Tensor pre = add(matmul(h, w2), b2);  // [N×1]
  return softplus(reshape(pre, {features.shape()[0]}));
}

RaySamples sample_rays(const CameraIntrinsics& K, const std::vector<Vec2>& pixels, int k,
                       double d_min, double d_max, std::optional<std::uint64_t> jitter_seed) {
  if (k < 2) throw BadRange("sample_rays: k must be >= 2");
  if (!(d_max > d_min) || !(d_min > 0)) throw BadRange("sample_rays: need d_max > d_min > 0");
  RaySamples s;
  s.num_rays = static_cast<int>(pixels.size());
  s.k = k;
  s.d_min = d_min;
  s.d_max = d_max;
  s.pixels.reserve(2 * pixels.size());
  s.dirs.reserve(3 * pixels.size());
  s.cos_theta.reserve(pixels.size());
  s.dist.resize(static_cast<std::size_t>(s.num_rays) * k);
  s.delta.resize(s.dist.size());

  std::optional<Rng> rng;
  if (jitter_seed) rng.emplace(*jitter_seed);

  const double bin = (d_max - d_min) / k;
  for (int r = 0; r < s.num_rays; ++r) {
    const Vec2& px = pixels[r];
    s.pixels.push_back(px.u);
    s.pixels.push_back(px.v);
    const Vec3 dir = unproject(K, px, 1.0).normalized();
    s.dirs.push_back(dir.x);
    s.dirs.push_back(dir.y);
    s.dirs.push_back(dir.z);
    s.cos_theta.push_back(dir.z);
    for (int i = 0; i < k; ++i) {
      const double jitter = rng ? rng->uniform() : 0.5;
      s.dist[static_cast<std::size_t>(r) * k + i] = d_min + (i + jitter) * bin;
    }
    for (int i = 0; i < k; ++i) {
      const std::size_t base = static_cast<std::size_t>(r) * k;
      s.delta[base + i] =
          i + 1 < k ? s.dist[base + i + 1] - s.dist[base + i] : s.delta[base + k - 2];
    }
  }
  return s;
}

Tensor encoding_matrix(const CameraIntrinsics& K, const std::vector<double>& pixels_uv,
                       const std::vector<double>& dists, int bands, double d_max) {
  const int n = static_cast<int>(dists.size());
  if (pixels_uv.size() != 2 * dists.size())
    throw ShapeMismatch("encoding_matrix: pixel/distance counts differ");
  Tensor enc = Tensor::zeros({n, 6 * bands});
  double* ed = enc.mutable_data().data();
  for (int i = 0; i < n; ++i) {
    const double u = pixels_uv[2 * i] / (K.width - 1);
    const double v = pixels_uv[2 * i + 1] / (K.height - 1);
    const double d = dists[i] / d_max;
    const auto row = positional_encoding(u, v, d, bands);
    std::copy(row.begin(), row.end(), ed + static_cast<long>(i) * 6 * bands);
  }
  return enc;
}

void eval_density(const FieldModel& model, const Tensor& feat_map, const CameraIntrinsics& K,
                  RaySamples& samples) {
  if (feat_map.rank() != 3 || feat_map.shape()[0] != model.feature_dim)
    throw ShapeMismatch("eval_density: feature map must be [F×H'×W']");
  const int R = samples.num_rays, k = samples.k;
  // One feature per ray: every sample on a ray projects to the ray's pixel.
  Tensor coords = Tensor::zeros({R, 2});
  for (int r = 0; r < R; ++r) {
    coords.mutable_data()[2 * r] = samples.pixels[2 * r] / kFeatureStride;
    coords.mutable_data()[2 * r + 1] = samples.pixels[2 * r + 1] / kFeatureStride;
  }
  Tensor ray_feats = bilinear_sample(feat_map, coords).values;   // [R×F]
  Tensor feats = repeat_rows(ray_feats, k);                      // [R*k×F]
  std::vector<double> px(2 * static_cast<std::size_t>(R) * k);
  for (int r = 0; r < R; ++r)
    for (int i = 0; i < k; ++i) {
      px[2 * (static_cast<std::size_t>(r) * k + i)] = samples.pixels[2 * r];
      px[2 * (static_cast<std::size_t>(r) * k + i) + 1] = samples.pixels[2 * r + 1];
    }
  Tensor enc = encoding_matrix(K, px, samples.dist, model.pe_bands, model.d_max);
  samples.sigma = model.density(feats, enc);  // [R*k]
}

CompositeResult composite_depth(RaySamples& samples, AlphaFormula formula) {
  const int R = samples.num_rays, k = samples.k;
  if (!samples.sigma.defined() || samples.sigma.numel() != R * k)
    throw ShapeMismatch("composite_depth: sigma not filled");
  for (int r = 0; r < R; ++r)
    for (int i = 0; i + 1 < k; ++i) {
      const std::size_t base = static_cast<std::size_t>(r) * k;
      if (!(samples.dist[base + i] < samples.dist[base + i + 1]))
        throw NonMonotoneSamples("composite_depth: distances must be strictly increasing");
    }

  samples.alpha.clear();
  samples.weights.clear();
  Tensor trans = Tensor::full({R}, 1.0);  // transmittance, constant seed
  Tensor depth = Tensor::zeros({R});
  Tensor wsum = Tensor::zeros({R});
  for (int i = 0; i < k; ++i) {
    Tensor sigma_i = strided_slice(samples.sigma, i, k, R);
    Tensor delta_i = Tensor::zeros({R});
    Tensor dist_i = Tensor::zeros({R});
    for (int r = 0; r < R; ++r) {
      delta_i.mutable_data()[r] = samples.delta[static_cast<std::size_t>(r) * k + i];
      dist_i.mutable_data()[r] = samples.dist[static_cast<std::size_t>(r) * k + i];
    }
    Tensor sd = mul(sigma_i, delta_i);
    Tensor alpha_i;
    if (formula == AlphaFormula::kStandard) {
      alpha_i = add_scalar(neg(exp(neg(sd))), 1.0);  // 1 - exp(-sigma*delta)
    } else {
      Tensor e = exp(add_scalar(neg(sd), 1.0));  // exp(1 - sigma*delta), clamped to <= 1
      alpha_i = add_scalar(neg(relu(add_scalar(neg(e), 1.0))), 1.0);
    }
    Tensor w_i = mul(trans, alpha_i);
    trans = sub(trans, w_i);  // T_{i+1} = T_i (1 - alpha_i)
    depth = add(depth, mul(w_i, dist_i));
    wsum = add(wsum, w_i);
    samples.alpha.push_back(alpha_i);
    samples.weights.push_back(w_i);
  }
  return {depth, wsum};
}

}  // namespace bevforge
