#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bevforge/checkpoint.hpp"
#include "bevforge/config.hpp"
#include "bevforge/dataset.hpp"
#include "bevforge/model.hpp"

namespace bevforge {

struct TrainLogRow {
  int epoch = 0;
  std::int64_t step = 0;
  double loss_photom = 0, loss_rgb = 0, loss_bev = 0;
  std::int64_t wall_ms = 0;
};

class TrainLog {
 public:
  void append(TrainLogRow row);
  const std::vector<TrainLogRow>& rows() const { return rows_; }
  void write_csv(const std::string& path) const;
  static TrainLog read_csv(const std::string& path);
  // Deterministic digest of (epoch, step, losses); wall time excluded.
  std::string loss_signature() const;

 private:
  std::vector<TrainLogRow> rows_;
};

struct EpochMetric {
  int epoch = 0;
  double value = 0;
};
void write_metric_csv(const std::string& path, const std::vector<EpochMetric>& rows,
                      const std::string& column);
// Joins two per-epoch metric series on epoch: epoch,a,b,gap.
void write_paired_csv(const std::string& path, const std::vector<EpochMetric>& a,
                      const std::vector<EpochMetric>& b);

struct PretrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

// Photometric + reconstruction pretraining with SGD under the configured
// schedule, one checkpoint per epoch (the returned checkpoint is the last).
// Never touches BEV labels or oracle depth (asserted). stop_after_epoch > 0
// interrupts the schedule early (the LR plan still derives from cfg.epochs),
// which is how resume is exercised.
PretrainResult pretrain(const Config& cfg, const Dataset& data,
                        const Checkpoint* resume = nullptr, int stop_after_epoch = 0);

struct FinetuneResult {
  Checkpoint checkpoint;
  TrainLog log;
  std::vector<EpochMetric> val_miou;  // logged once per epoch when a val split exists
};

// BEV finetuning phase: masking disabled, reconstruction head dropped,
// cross-entropy on a seeded label_fraction subset of training scenes.
FinetuneResult finetune(const Config& cfg, const Dataset& data, const Checkpoint* init,
                        double label_fraction);

struct EvalMetrics {
  std::string split;
  int frames = 0;
  double miou = 0;
  std::vector<double> per_class_iou;  // -1 for classes absent from pred and gt
  double abs_rel = 0;
};

// Pure aggregation over per-scene (pred, gt) BEV pairs and per-frame abs-rel
// values; evaluate_model feeds it from the real model.
EvalMetrics aggregate_metrics(const std::string& split, int num_classes,
                              const std::vector<std::pair<BevMap, BevMap>>& bev_pairs,
                              const std::vector<double>& frame_abs_rels);

EvalMetrics evaluate_model(const Config& cfg, Model& model, const Dataset& data,
                           const std::string& split);
EvalMetrics evaluate_checkpoint(const Checkpoint& ckpt, const Dataset& data,
                                const std::string& split);
std::string metrics_to_json(const EvalMetrics& m);

// Depth abs-rel of the geometric pathway on one frame (validity: oracle depth
// present and ray weight sum above threshold). Used by eval and tests.
double depth_abs_rel(const Config& cfg, Model& model, const Dataset& data, int scene_idx,
                     int frame_idx);

// Deterministic no-jitter forward pass products for one frame.
struct FrameRender {
  std::vector<double> depth;  // [Hf×Wf] z-depth meters, 0 where the ray is empty
  int height = 0, width = 0;
  BevMap bev_pred;
};
FrameRender render_frame_outputs(const Config& cfg, Model& model, const Dataset& data,
                                 int scene_idx, int frame_idx);

// CLI render op: writes depth.pgm (16-bit mm), bev.pgm and bev palette JSON
// into out_dir. frame_id is "<scene_name>:<frame_index>".
void render_to_dir(const Checkpoint& ckpt, const Dataset& data, const std::string& frame_id,
                   const std::string& out_dir);

class SgdOptimizer;

// Snapshot with the velocity table aligned to the full named-parameter table
// (zeros for parameters the phase's optimizer does not own).
Checkpoint make_checkpoint(const Config& cfg, Model& model, const SgdOptimizer* opt,
                           const std::string& rng_state, std::uint32_t epoch,
                           std::uint64_t step);

}  // namespace bevforge
