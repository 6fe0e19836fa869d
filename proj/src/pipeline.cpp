#include "bevforge/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "bevforge/image_io.hpp"
#include "bevforge/photometric.hpp"
#include "bevforge/sgd.hpp"

namespace bevforge {
namespace {

using Clock = std::chrono::steady_clock;

constexpr double kWsumValidThreshold = 0.5;  // empty rays are cut from losses

struct StepContext {
  CameraIntrinsics K;       // full resolution
  CameraIntrinsics K_half;  // photometric supervision resolution
  CameraIntrinsics K_feat;  // feature-lattice resolution
  int Hf = 0, Wf = 0;
  std::vector<Vec2> ray_pixels;  // full-res coords of feature-lattice centers
  Tensor cos_theta;              // [R] constants
};

StepContext make_context(const Config& cfg, const Dataset& data) {
  StepContext ctx;
  ctx.K = data.intrinsics();
  ctx.K_half = ctx.K.scaled(0.5);
  ctx.K_feat = ctx.K.scaled(1.0 / kFeatureStride);
  ctx.Hf = (data.height() + kFeatureStride - 1) / kFeatureStride;
  ctx.Wf = (data.width() + kFeatureStride - 1) / kFeatureStride;
  ctx.ray_pixels.reserve(static_cast<std::size_t>(ctx.Hf) * ctx.Wf);
  for (int y = 0; y < ctx.Hf; ++y)
    for (int x = 0; x < ctx.Wf; ++x)
      ctx.ray_pixels.push_back({static_cast<double>(x * kFeatureStride),
                                static_cast<double>(y * kFeatureStride)});
  RaySamples probe = sample_rays(ctx.K, ctx.ray_pixels, std::max(cfg.k, 2), cfg.d_min, cfg.d_max,
                                 std::nullopt);
  ctx.cos_theta = Tensor::from_data({ctx.Hf * ctx.Wf}, probe.cos_theta);
  return ctx;
}

struct GeoPass {
  Tensor geo_feats;   // [F×Hf×Wf]
  Tensor depth_gated; // [Hf×Wf] z-depth, zeroed where wsum <= threshold
  Tensor wsum;        // [R]
  RaySamples rays;
};

GeoPass run_geo(const Config& cfg, Model& model, const Tensor& image, const StepContext& ctx,
                std::optional<std::uint64_t> jitter_seed) {
  GeoPass g;
  g.geo_feats = model.geo_encoder.encode(image);
  g.rays = sample_rays(ctx.K, ctx.ray_pixels, cfg.k, cfg.d_min, cfg.d_max, jitter_seed);
  eval_density(model.field, g.geo_feats, ctx.K, g.rays);
  CompositeResult comp = composite_depth(g.rays, alpha_formula_from_string(cfg.alpha_formula));
  Tensor depth_z = mul(comp.depth, ctx.cos_theta);
  const int R = ctx.Hf * ctx.Wf;
  Tensor gate = Tensor::zeros({R});
  for (int r = 0; r < R; ++r)
    gate.mutable_data()[r] = comp.wsum.data()[r] > kWsumValidThreshold ? 1.0 : 0.0;
  g.depth_gated = reshape(mul(depth_z, gate), {ctx.Hf, ctx.Wf});
  g.wsum = comp.wsum;
  return g;
}

// Photometric supervision runs at half resolution: coarse enough to stay
// cheap, fine enough that small depth errors still move the loss.
std::vector<ViewPair> photometric_views(const Config& cfg, const Dataset& data,
                                        const DatasetScene& scene, int t0,
                                        const StepContext& ctx) {
  const int Hh = data.height() / 2, Wh = data.width() / 2;
  std::vector<ViewPair> views;
  Tensor src = Tensor::from_data({3, Hh, Wh}, scene.frames[t0].image_half);
  for (int i = 1; i < cfg.window; ++i) {
    ViewPair v;
    v.src_image = src;
    v.tgt_image = Tensor::from_data({3, Hh, Wh}, scene.frames[t0 + i].image_half);
    v.relative_pose = compose(invert(scene.frames[t0 + i].world_from_cam),
                              scene.frames[t0].world_from_cam);
    v.intrinsics = ctx.K_half;
    views.push_back(std::move(v));
  }
  if (cfg.use_spatial_camera && !scene.frames_cam2.empty()) {
    ViewPair v;
    v.src_image = src;
    v.tgt_image = Tensor::from_data({3, Hh, Wh}, scene.frames_cam2[t0].image_half);
    v.relative_pose = compose(invert(scene.frames_cam2[t0].world_from_cam),
                              scene.frames[t0].world_from_cam);
    v.intrinsics = ctx.K_half;
    views.push_back(std::move(v));
  }
  return views;
}

Tensor semantic_loss(const Config& cfg, Model& model, const DatasetScene& scene, int t0,
                     const Tensor& geo_feats, const StepContext& ctx, std::uint64_t mask_seed,
                     std::optional<std::uint64_t> jitter_seed) {
  MaskSpec mask_spec;
  mask_spec.patch_size = cfg.patch_size;
  mask_spec.ratio = cfg.mask_ratio;
  mask_spec.seed = mask_seed;
  MaskSpec mask = generate_mask(mask_spec, ctx.K.height, ctx.K.width);

  const Tensor& image = scene.frames[t0].image;
  Tensor sem_feats = masked_encode(model.sem_encoder, image, mask);
  VoxelGrid v0 = lift_to_voxels(sem_feats, model.field, geo_feats, ctx.K, cfg.grid, &mask);
  VoxelGrid dense = mask.masked_count() > 0 ? densify(v0, model.mask_token) : v0;

  RaySamples rays = sample_rays(ctx.K, ctx.ray_pixels, cfg.k, cfg.d_min, cfg.d_max, jitter_seed);
  const AlphaFormula alpha = alpha_formula_from_string(cfg.alpha_formula);
  const int feat_patch = cfg.patch_size / kFeatureStride;
  const int n = cfg.window - 1;

  std::vector<ReconTarget> targets;
  for (int i = 0; i <= n; ++i) {
    const Pose rel = i == 0 ? identity_pose()
                            : compose(invert(scene.frames[t0 + i].world_from_cam),
                                      scene.frames[t0].world_from_cam);
    const VoxelGrid grid_i = i == 0 ? dense : warp_voxels(dense, rel);
    ReconTarget target;
    target.predicted = model.recon_head.apply(collapse_to_fv(grid_i, rays, ctx.Hf, ctx.Wf, alpha));
    target.reference = scene.frames[t0 + i].image_small;
    target.patch_valid =
        footprint_valid_patches(cfg.grid, rel, rays, ctx.K, ctx.Hf, ctx.Wf, feat_patch);
    targets.push_back(std::move(target));
  }
  return reconstruction_loss(targets, mask, n, feat_patch);
}

std::vector<std::pair<int, int>> epoch_samples(const Config& cfg, const Dataset& data,
                                               const std::vector<int>& scene_indices,
                                               int epoch) {
  std::vector<std::pair<int, int>> samples;
  for (int s : scene_indices) {
    const int frames = static_cast<int>(data.scene(s).frames.size());
    const int last_t0 = frames - cfg.window - cfg.holdout_frames;
    for (int t0 = 0; t0 <= last_t0; ++t0) {
      // skip windows that touch the interior held-out frame
      if (cfg.holdout_frame >= t0 && cfg.holdout_frame < t0 + cfg.window) continue;
      samples.emplace_back(s, t0);
    }
  }
  if (samples.empty())
    throw DatasetTooSmall("pretrain: no scene offers a full window after holdout");
  Rng rng(mix_seed(cfg.seed ^ 0x5a5a5a5aULL, static_cast<std::uint64_t>(epoch)));
  std::shuffle(samples.begin(), samples.end(), rng.engine());
  return samples;
}

double lr_at_epoch(const Config& cfg, int epoch_1based) {
  double lr = cfg.lr;
  for (std::size_t i = 0; i < cfg.lr_decay_at.size(); ++i) {
    const int at = static_cast<int>(std::ceil(cfg.lr_decay_at[i] * cfg.epochs - 1e-9));
    if (epoch_1based >= at) lr *= cfg.lr_decay_factor[i];
  }
  return lr;
}

std::string rng_state_string(Rng& rng) {
  std::ostringstream os;
  os << rng.engine();
  return os.str();
}

BevMap predict_bev(const Config& cfg, Model& model, const StepContext& ctx,
                   const DatasetScene& scene, int frame_idx) {
  NoGradScope ng;
  const Tensor& image = scene.frames[frame_idx].image;
  Tensor geo_feats = model.geo_encoder.encode(image);
  Tensor sem_feats = model.sem_encoder.encode(image);
  VoxelGrid v0 = lift_to_voxels(sem_feats, model.field, geo_feats, ctx.K, cfg.grid, nullptr);
  Tensor logits = model.bev_head.apply(collapse_to_bev(v0));
  const int C = logits.shape()[0], nx = logits.shape()[1], nz = logits.shape()[2];
  BevMap pred;
  pred.nx = nx;
  pred.nz = nz;
  pred.num_classes = C;
  pred.classes.resize(static_cast<std::size_t>(nx) * nz);
  const int cells = nx * nz;
  for (int i = 0; i < cells; ++i) {
    int best = 0;
    double bv = logits.data()[i];
    for (int c = 1; c < C; ++c) {
      const double v = logits.data()[static_cast<std::size_t>(c) * cells + i];
      if (v > bv) {
        bv = v;
        best = c;
      }
    }
    pred.classes[i] = static_cast<std::uint8_t>(best);
  }
  return pred;
}

}  // namespace

void TrainLog::append(TrainLogRow row) { rows_.push_back(row); }

void TrainLog::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("trainlog: cannot write " + path);
  out << "epoch,step,loss_photom,loss_rgb,loss_bev,wall_ms\n";
  char line[256];
  for (const TrainLogRow& r : rows_) {
    std::snprintf(line, sizeof line, "%d,%lld,%.17g,%.17g,%.17g,%lld\n", r.epoch,
                  static_cast<long long>(r.step), r.loss_photom, r.loss_rgb, r.loss_bev,
                  static_cast<long long>(r.wall_ms));
    out << line;
  }
}

TrainLog TrainLog::read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("trainlog: cannot open " + path);
  TrainLog log;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TrainLogRow r;
    long long step = 0, wall = 0;
    if (std::sscanf(line.c_str(), "%d,%lld,%lg,%lg,%lg,%lld", &r.epoch, &step, &r.loss_photom,
                    &r.loss_rgb, &r.loss_bev, &wall) != 6)
      throw IoError("trainlog: malformed row in " + path);
    r.step = step;
    r.wall_ms = wall;
    log.rows_.push_back(r);
  }
  return log;
}

std::string TrainLog::loss_signature() const {
  std::ostringstream os;
  char buf[192];
  for (const TrainLogRow& r : rows_) {
    std::snprintf(buf, sizeof buf, "%d,%lld,%.17g,%.17g,%.17g\n", r.epoch,
                  static_cast<long long>(r.step), r.loss_photom, r.loss_rgb, r.loss_bev);
    os << buf;
  }
  return os.str();
}

void write_metric_csv(const std::string& path, const std::vector<EpochMetric>& rows,
                      const std::string& column) {
  std::ofstream out(path);
  if (!out) throw IoError("metrics: cannot write " + path);
  out << "epoch," << column << "\n";
  char line[96];
  for (const EpochMetric& m : rows) {
    std::snprintf(line, sizeof line, "%d,%.17g\n", m.epoch, m.value);
    out << line;
  }
}

void write_paired_csv(const std::string& path, const std::vector<EpochMetric>& a,
                      const std::vector<EpochMetric>& b) {
  std::ofstream out(path);
  if (!out) throw IoError("metrics: cannot write " + path);
  out << "epoch,a,b,gap\n";
  char line[160];
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g\n", a[i].epoch, a[i].value,
                  b[i].value, a[i].value - b[i].value);
    out << line;
  }
}

Checkpoint make_checkpoint(const Config& cfg, Model& model, const SgdOptimizer* opt,
                           const std::string& rng_state, std::uint32_t epoch,
                           std::uint64_t step) {
  Checkpoint ckpt;
  ckpt.config_json = cfg.to_json_string();
  for (auto& [name, tensor] : model.named_params()) {
    ckpt.params.emplace_back(name, Tensor::from_data(tensor.shape(), tensor.data()));
    std::vector<double> vel(tensor.numel(), 0.0);
    if (opt) {
      const auto& owned = opt->params();
      for (std::size_t i = 0; i < owned.size(); ++i)
        if (owned[i].node() == tensor.node()) {
          vel = opt->velocities()[i];
          break;
        }
    }
    ckpt.velocities.push_back(std::move(vel));
  }
  ckpt.rng_state = rng_state;
  ckpt.epoch = epoch;
  ckpt.step = step;
  return ckpt;
}

PretrainResult pretrain(const Config& cfg, const Dataset& data, const Checkpoint* resume,
                        int stop_after_epoch) {
  cfg.validate();
  const Pathways mode = cfg.pathway_mode();
  for (int s : data.split_indices("train")) {
    if (static_cast<int>(data.scene(s).frames.size()) < cfg.window)
      throw DatasetTooSmall("pretrain: scene " + data.scene(s).name +
                            " has fewer frames than the window");
  }
  data.reset_counters();

  Rng init_rng(cfg.seed);
  Model model = Model::create(cfg, init_rng);
  const bool include_token = mode != Pathways::kGeometric && cfg.mask_ratio > 0.0;
  std::vector<Tensor> params = model.pretrain_params(mode, include_token);
  SgdOptimizer opt(params, cfg.momentum, cfg.weight_decay);

  int start_epoch = 0;
  std::uint64_t step = 0;
  if (resume) {
    model.load_from(*resume);
    Config resumed = Config::from_json_string(resume->config_json);
    if (resumed.to_json_string() != cfg.to_json_string())
      throw ConfigError("pretrain: resume config does not match");
    // velocities were saved aligned with the full named table; pick out this
    // phase's parameters by node identity
    std::vector<std::pair<std::string, Tensor>> named = model.named_params();
    if (resume->velocities.size() != named.size())
      throw IoError("pretrain: resume velocity table mismatch");
    for (std::size_t pi = 0; pi < params.size(); ++pi)
      for (std::size_t ni = 0; ni < named.size(); ++ni)
        if (params[pi].node() == named[ni].second.node()) {
          opt.velocities()[pi] = resume->velocities[ni];
          break;
        }
    start_epoch = static_cast<int>(resume->epoch);
    step = resume->step;
  }

  const StepContext ctx = make_context(cfg, data);
  const std::vector<int> train_scenes = data.split_indices("train");
  TrainLog log;
  PretrainResult result;

  const int end_epoch =
      stop_after_epoch > 0 ? std::min(stop_after_epoch, cfg.epochs) : cfg.epochs;
  for (int epoch = start_epoch + 1; epoch <= end_epoch; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    for (const auto& [scene_idx, t0] : epoch_samples(cfg, data, train_scenes, epoch)) {
      const auto t_start = Clock::now();
      ++step;
      Tape::active().reset();
      const DatasetScene& scene = data.scene(scene_idx);

      Tensor geo_feats;
      TrainLogRow row;
      row.epoch = epoch;
      row.step = static_cast<std::int64_t>(step);

      Tensor loss = Tensor::scalar(0.0);
      const std::optional<std::uint64_t> jitter =
          cfg.jitter ? std::optional<std::uint64_t>(mix_seed(cfg.seed, step * 2))
                     : std::nullopt;
      if (mode != Pathways::kSemantic) {
        GeoPass geo = run_geo(cfg, model, scene.frames[t0].image, ctx, jitter);
        geo_feats = geo.geo_feats;
        Tensor depth_half = upsample_nearest2d(geo.depth_gated, kFeatureStride / 2);
        Tensor photom = photometric_loss(photometric_views(cfg, data, scene, t0, ctx),
                                         depth_half);
        row.loss_photom = photom.value();
        loss = add(loss, photom);
      } else {
        geo_feats = model.geo_encoder.encode(scene.frames[t0].image);
      }
      if (mode != Pathways::kGeometric) {
        Tensor rgb = semantic_loss(cfg, model, scene, t0, geo_feats, ctx,
                                   mix_seed(cfg.seed, step * 2 + 1),
                                   cfg.jitter ? std::optional<std::uint64_t>(
                                                    mix_seed(cfg.seed, step * 3 + 2))
                                              : std::nullopt);
        row.loss_rgb = rgb.value();
        loss = add(loss, rgb);
      }
      backward(loss);
      opt.step(lr);
      row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t_start)
                        .count();
      log.append(row);
    }
    result.checkpoint = make_checkpoint(cfg, model, &opt, rng_state_string(init_rng),
                                        static_cast<std::uint32_t>(epoch), step);
  }

  if (data.bev_label_reads() != 0 || data.depth_gt_reads() != 0)
    throw Error("pretrain: phase separation violated (label or depth access detected)");
  if (result.checkpoint.params.empty())
    result.checkpoint = make_checkpoint(cfg, model, &opt, rng_state_string(init_rng),
                                        static_cast<std::uint32_t>(start_epoch), step);
  result.log = std::move(log);
  return result;
}

FinetuneResult finetune(const Config& cfg, const Dataset& data, const Checkpoint* init,
                        double label_fraction) {
  cfg.validate();
  if (!(label_fraction > 0.0) || label_fraction > 1.0)
    throw NoLabels("finetune: label_fraction outside (0,1]");
  data.reset_counters();

  Rng init_rng(cfg.seed);
  Model model = Model::create(cfg, init_rng);
  if (init) model.load_from(*init);
  std::vector<Tensor> params = model.finetune_params();
  SgdOptimizer opt(params, cfg.momentum, cfg.weight_decay);

  const std::vector<int> train_scenes = data.split_indices("train");
  std::vector<int> labeled = train_scenes;
  {
    Rng rng(mix_seed(cfg.seed, 0xbe7ULL));
    std::shuffle(labeled.begin(), labeled.end(), rng.engine());
    const int want = std::max<int>(
        1, static_cast<int>(std::llround(label_fraction * static_cast<double>(labeled.size()))));
    labeled.resize(std::min<std::size_t>(labeled.size(), want));
    std::sort(labeled.begin(), labeled.end());
  }
  if (labeled.empty()) throw NoLabels("finetune: empty label subset");

  bool has_val = true;
  std::vector<int> val_scenes;
  try {
    val_scenes = data.split_indices("val");
  } catch (const MissingSplit&) {
    has_val = false;
  }

  const StepContext ctx = make_context(cfg, data);
  TrainLog log;
  FinetuneResult result;
  std::uint64_t step = 0;
  const std::int64_t depth_reads_before = data.depth_gt_reads();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    std::vector<int> order = labeled;
    Rng rng(mix_seed(cfg.seed ^ 0xf17eULL, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (int scene_idx : order) {
      const auto t_start = Clock::now();
      ++step;
      Tape::active().reset();
      const DatasetScene& scene = data.scene(scene_idx);
      const Tensor& image = scene.frames[0].image;
      Tensor geo_feats = model.geo_encoder.encode(image);
      Tensor sem_feats = model.sem_encoder.encode(image);  // masking disabled
      VoxelGrid v0 = lift_to_voxels(sem_feats, model.field, geo_feats, ctx.K, cfg.grid, nullptr);
      Tensor logits = model.bev_head.apply(collapse_to_bev(v0));
      Tensor loss = bev_cross_entropy(logits, data.bev_labels(scene_idx));
      backward(loss);
      opt.step(lr);
      TrainLogRow row;
      row.epoch = epoch;
      row.step = static_cast<std::int64_t>(step);
      row.loss_bev = loss.value();
      row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t_start)
                        .count();
      log.append(row);
    }
    if (has_val) {
      std::vector<std::int64_t> confusion;
      for (int s : val_scenes) {
        BevMap pred = predict_bev(cfg, model, ctx, data.scene(s), 0);
        accumulate_confusion(pred, data.bev_labels(s), cfg.num_classes, confusion);
      }
      result.val_miou.push_back({epoch, iou_from_confusion(confusion, cfg.num_classes).mean});
    }
    result.checkpoint = make_checkpoint(cfg, model, &opt, rng_state_string(init_rng),
                                        static_cast<std::uint32_t>(epoch), step);
  }
  if (data.depth_gt_reads() != depth_reads_before)
    throw Error("finetune: phase separation violated (oracle depth accessed)");
  result.log = std::move(log);
  return result;
}

double depth_abs_rel(const Config& cfg, Model& model, const Dataset& data, int scene_idx,
                     int frame_idx) {
  NoGradScope ng;
  const StepContext ctx = make_context(cfg, data);
  GeoPass geo = run_geo(cfg, model, data.scene(scene_idx).frames[frame_idx].image, ctx,
                        std::nullopt);
  const std::vector<double>& gt = data.depth_gt(scene_idx, frame_idx);
  double acc = 0;
  int n = 0;
  for (int y = 0; y < ctx.Hf; ++y)
    for (int x = 0; x < ctx.Wf; ++x) {
      const double pred = geo.depth_gated.data()[static_cast<std::size_t>(y) * ctx.Wf + x];
      const double truth =
          gt[static_cast<std::size_t>(y) * kFeatureStride * data.width() + x * kFeatureStride];
      if (truth <= 0.0 || pred <= 0.0) continue;
      acc += std::fabs(pred - truth) / truth;
      ++n;
    }
  return n > 0 ? acc / n : std::numeric_limits<double>::infinity();
}

EvalMetrics aggregate_metrics(const std::string& split, int num_classes,
                              const std::vector<std::pair<BevMap, BevMap>>& bev_pairs,
                              const std::vector<double>& frame_abs_rels) {
  EvalMetrics m;
  m.split = split;
  std::vector<std::int64_t> confusion;
  confusion.assign(static_cast<std::size_t>(num_classes) * (num_classes + 1), 0);
  for (const auto& [pred, gt] : bev_pairs) accumulate_confusion(pred, gt, num_classes, confusion);
  const IouResult iou = iou_from_confusion(confusion, num_classes);
  m.miou = iou.mean;
  m.per_class_iou = iou.per_class;
  double acc = 0;
  int counted = 0;
  for (double ar : frame_abs_rels) {
    ++m.frames;
    if (std::isfinite(ar)) {
      acc += ar;
      ++counted;
    }
  }
  m.abs_rel = counted > 0 ? acc / counted : -1.0;
  return m;
}

EvalMetrics evaluate_model(const Config& cfg, Model& model, const Dataset& data,
                           const std::string& split) {
  const std::vector<int> scenes = data.split_indices(split);
  const StepContext ctx = make_context(cfg, data);
  std::vector<std::pair<BevMap, BevMap>> bev_pairs;
  std::vector<double> frame_abs_rels;
  for (int s : scenes) {
    bev_pairs.emplace_back(predict_bev(cfg, model, ctx, data.scene(s), 0), data.bev_labels(s));
    for (std::size_t f = 0; f < data.scene(s).frames.size(); ++f)
      frame_abs_rels.push_back(depth_abs_rel(cfg, model, data, s, static_cast<int>(f)));
  }
  return aggregate_metrics(split, cfg.num_classes, bev_pairs, frame_abs_rels);
}

EvalMetrics evaluate_checkpoint(const Checkpoint& ckpt, const Dataset& data,
                                const std::string& split) {
  Config cfg = Config::from_json_string(ckpt.config_json);
  Rng rng(cfg.seed);
  Model model = Model::create(cfg, rng);
  model.load_from(ckpt);
  return evaluate_model(cfg, model, data, split);
}

std::string metrics_to_json(const EvalMetrics& m) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["split"] = m.split;
  j["frames"] = m.frames;
  j["miou"] = m.miou;
  j["abs_rel"] = m.abs_rel;
  static const char* kNames[kNumClasses] = {"road", "terrain", "building", "car", "void"};
  nlohmann::json per;
  for (std::size_t c = 0; c < m.per_class_iou.size(); ++c) {
    const std::string name = c < kNumClasses ? kNames[c] : ("class_" + std::to_string(c));
    per[name] = m.per_class_iou[c];
  }
  j["per_class_iou"] = per;
  return j.dump(2);
}

FrameRender render_frame_outputs(const Config& cfg, Model& model, const Dataset& data,
                                 int scene_idx, int frame_idx) {
  NoGradScope ng;
  const StepContext ctx = make_context(cfg, data);
  GeoPass geo = run_geo(cfg, model, data.scene(scene_idx).frames[frame_idx].image, ctx,
                        std::nullopt);
  FrameRender out;
  out.height = ctx.Hf;
  out.width = ctx.Wf;
  out.depth.assign(geo.depth_gated.data().begin(), geo.depth_gated.data().end());
  out.bev_pred = predict_bev(cfg, model, ctx, data.scene(scene_idx), frame_idx);
  return out;
}

void render_to_dir(const Checkpoint& ckpt, const Dataset& data, const std::string& frame_id,
                   const std::string& out_dir) {
  const auto colon = frame_id.find(':');
  if (colon == std::string::npos) throw BadFrame("render: frame id must be scene:index");
  const std::string scene_name = frame_id.substr(0, colon);
  int frame_idx = -1;
  try {
    frame_idx = std::stoi(frame_id.substr(colon + 1));
  } catch (...) {
    throw BadFrame("render: bad frame index in '" + frame_id + "'");
  }
  int scene_idx = -1;
  for (int i = 0; i < data.num_scenes(); ++i)
    if (data.scene(i).name == scene_name) scene_idx = i;
  if (scene_idx < 0) throw BadFrame("render: unknown scene '" + scene_name + "'");
  if (frame_idx < 0 || frame_idx >= static_cast<int>(data.scene(scene_idx).frames.size()))
    throw BadFrame("render: frame index out of range");

  Config cfg = Config::from_json_string(ckpt.config_json);
  Rng rng(cfg.seed);
  Model model = Model::create(cfg, rng);
  model.load_from(ckpt);
  FrameRender fr = render_frame_outputs(cfg, model, data, scene_idx, frame_idx);

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("render: cannot create " + out_dir);
  write_pgm16((fs::path(out_dir) / "depth.pgm").string(), fr.depth, fr.height, fr.width);
  write_pgm8((fs::path(out_dir) / "bev.pgm").string(), fr.bev_pred.classes, fr.bev_pred.nx,
             fr.bev_pred.nz);
  nlohmann::json side;
  side["ignore_index"] = kIgnoreIndex;
  side["palette"] = nlohmann::json::array({
      nlohmann::json{{"id", 0}, {"name", "road"}, {"rgb", {108, 108, 118}}},
      nlohmann::json{{"id", 1}, {"name", "terrain"}, {"rgb", {77, 122, 66}}},
      nlohmann::json{{"id", 2}, {"name", "building"}, {"rgb", {148, 122, 102}}},
      nlohmann::json{{"id", 3}, {"name", "car"}, {"rgb", {158, 66, 61}}},
      nlohmann::json{{"id", 4}, {"name", "void"}, {"rgb", {140, 166, 204}}},
  });
  std::ofstream out(fs::path(out_dir) / "bev.json");
  if (!out) throw IoError("render: cannot write bev.json");
  out << side.dump(2) << "\n";
}

}  // namespace bevforge
