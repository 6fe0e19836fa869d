#include "bevforge/dataset.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "bevforge/field.hpp"
#include "bevforge/image_io.hpp"

namespace bevforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Pose pose_from_json(const json& j) {
  Pose p;
  const auto r = j.at("world_from_cam_R").get<std::vector<double>>();
  const auto t = j.at("world_from_cam_t").get<std::vector<double>>();
  if (r.size() != 9 || t.size() != 3) throw IoError("dataset: malformed pose");
  std::copy(r.begin(), r.end(), p.rotation.m.begin());
  p.translation = {t[0], t[1], t[2]};
  return p;
}

DatasetFrame load_frame(const fs::path& dir, const char* rgb_prefix, const char* depth_prefix,
                        std::size_t index, int expect_h, int expect_w, const Pose& pose) {
  char name[48];
  DatasetFrame f;
  int h = 0, w = 0;
  std::snprintf(name, sizeof name, "%s%04zu.ppm", rgb_prefix, index);
  auto rgb = read_ppm((dir / name).string(), h, w);
  if (h != expect_h || w != expect_w) throw IoError("dataset: image size mismatch in " +
                                                    (dir / name).string());
  f.image = Tensor::from_data({3, h, w}, std::move(rgb));
  f.image_half = downsample_area(f.image.data(), 3, h, w, 2);
  f.image_small = downsample_area(f.image.data(), 3, h, w, kFeatureStride);
  std::snprintf(name, sizeof name, "%s%04zu.pgm", depth_prefix, index);
  f.depth_gt = read_pgm16((dir / name).string(), h, w);
  f.world_from_cam = pose;
  return f;
}

}  // namespace

Dataset Dataset::load(const std::string& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("dataset: cannot open " + manifest_path);
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw IoError(std::string("dataset: manifest parse error: ") + e.what());
  }
  if (!manifest.contains("schema_version") || manifest["schema_version"].get<int>() != 1)
    throw IoError("dataset: unsupported manifest schema");

  Dataset ds;
  const fs::path root = fs::path(manifest_path).parent_path();
  for (const auto& scene_json : manifest.at("scenes")) {
    DatasetScene scene;
    scene.name = scene_json.at("name").get<std::string>();
    scene.split = scene_json.at("split").get<std::string>();
    const int frames = scene_json.at("frames").get<int>();
    const fs::path dir = root / scene.name;

    std::ifstream pf(dir / "poses.json");
    if (!pf) throw IoError("dataset: missing poses.json in " + dir.string());
    json poses = json::parse(pf);
    const auto& intr = poses.at("intrinsics");
    CameraIntrinsics K;
    K.fx = intr.at("fx");
    K.fy = intr.at("fy");
    K.cx = intr.at("cx");
    K.cy = intr.at("cy");
    K.width = intr.at("width");
    K.height = intr.at("height");
    if (ds.scenes_.empty()) {
      ds.intrinsics_ = K;
      ds.width_ = K.width;
      ds.height_ = K.height;
    }

    for (int i = 0; i < frames; ++i) {
      const Pose pose = pose_from_json(poses.at("frames").at(i));
      scene.frames.push_back(load_frame(dir, "rgb_", "depth_", i, K.height, K.width, pose));
    }
    if (poses.contains("frames_cam2")) {
      for (int i = 0; i < frames; ++i) {
        const Pose pose = pose_from_json(poses.at("frames_cam2").at(i));
        scene.frames_cam2.push_back(
            load_frame(dir, "rgb2_", "depth2_", i, K.height, K.width, pose));
      }
    }

    int bh = 0, bw = 0;
    scene.bev_gt.classes = read_pgm8((dir / "bev.pgm").string(), bh, bw);
    scene.bev_gt.nx = bh;
    scene.bev_gt.nz = bw;
    scene.bev_gt.num_classes = kNumClasses;

    std::ifstream bf(dir / "bev.json");
    if (bf) {
      json side = json::parse(bf);
      if (side.contains("grid")) {
        ds.bev_grid_.x_min = side["grid"]["x_min"];
        ds.bev_grid_.x_max = side["grid"]["x_max"];
        ds.bev_grid_.z_min = side["grid"]["z_min"];
        ds.bev_grid_.z_max = side["grid"]["z_max"];
        ds.bev_grid_.nx = side["grid"]["nx"];
        ds.bev_grid_.nz = side["grid"]["nz"];
      }
    }
    ds.scenes_.push_back(std::move(scene));
  }
  if (ds.scenes_.empty()) throw IoError("dataset: manifest lists no scenes");
  return ds;
}

std::vector<int> Dataset::split_indices(const std::string& split) const {
  std::vector<int> out;
  for (int i = 0; i < num_scenes(); ++i)
    if (scenes_[i].split == split) out.push_back(i);
  if (out.empty()) throw MissingSplit("dataset: no scenes in split '" + split + "'");
  return out;
}

const BevMap& Dataset::bev_labels(int scene_idx) const {
  ++bev_label_reads_;
  return scenes_.at(scene_idx).bev_gt;
}

const std::vector<double>& Dataset::depth_gt(int scene_idx, int frame_idx) const {
  ++depth_gt_reads_;
  return scenes_.at(scene_idx).frames.at(frame_idx).depth_gt;
}

void Dataset::reset_counters() const {
  bev_label_reads_ = 0;
  depth_gt_reads_ = 0;
}

}  // namespace bevforge
