#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bevforge/bev.hpp"
#include "bevforge/camera.hpp"
#include "bevforge/tensor.hpp"

namespace bevforge {

struct DatasetFrame {
  Tensor image;                      // [3×H×W]
  std::vector<double> image_half;    // [3×H/2×W/2] area-downsampled
  std::vector<double> image_small;   // [3×H/4×W/4] area-downsampled
  std::vector<double> depth_gt;      // [H×W] z-depth, 0 = invalid
  Pose world_from_cam;
};

struct DatasetScene {
  std::string name;
  std::string split;
  std::vector<DatasetFrame> frames;
  std::vector<DatasetFrame> frames_cam2;  // empty without a spatial camera
  BevMap bev_gt;
};

// In-memory dataset with access accounting: BEV labels and ground-truth depth
// are only reachable through counting accessors, so the training phases can
// assert they never touched what they must not.
class Dataset {
 public:
  static Dataset load(const std::string& manifest_path);

  int width() const { return width_; }
  int height() const { return height_; }
  const CameraIntrinsics& intrinsics() const { return intrinsics_; }
  const BevGridSpec& bev_grid() const { return bev_grid_; }

  int num_scenes() const { return static_cast<int>(scenes_.size()); }
  const DatasetScene& scene(int idx) const { return scenes_.at(idx); }
  // Throws MissingSplit when the split name matches no scene.
  std::vector<int> split_indices(const std::string& split) const;

  const BevMap& bev_labels(int scene_idx) const;              // counted
  const std::vector<double>& depth_gt(int scene_idx, int frame_idx) const;  // counted
  std::int64_t bev_label_reads() const { return bev_label_reads_; }
  std::int64_t depth_gt_reads() const { return depth_gt_reads_; }
  void reset_counters() const;

 private:
  std::vector<DatasetScene> scenes_;
  CameraIntrinsics intrinsics_;
  BevGridSpec bev_grid_;
  int width_ = 0, height_ = 0;
  mutable std::int64_t bev_label_reads_ = 0;
  mutable std::int64_t depth_gt_reads_ = 0;
};

}  // namespace bevforge
