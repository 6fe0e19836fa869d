#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bevforge/bev.hpp"
#include "bevforge/camera.hpp"

namespace bevforge {

// Axis-aligned box in world coordinates (y points down; the ground plane sits
// at y = camera_height and boxes rest on it).
struct BoxSpec {
  Vec3 center;
  Vec3 size;
  std::uint8_t class_id = kClassBuilding;
  std::uint32_t texture_id = 0;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int width = 288, height = 96;
  double fx = 140.0, fy = 140.0;   // cx,cy default to the image center
  double camera_height = 1.5;      // meters above the ground plane
  int num_frames = 8;
  double step_z = 0.35;            // forward motion per frame
  double yaw_per_frame = 0.0;      // radians
  double second_camera_offset_x = 0.0;  // 0 disables the spatial camera
  double road_halfwidth = 3.0;
  double far_limit = 38.0;         // z-depth beyond this renders as sky; inside the field sampling range
  double texture_scale = 0.7;      // base noise frequency, cycles per meter
  int supersample = 2;             // n×n color rays per pixel (depth stays the exact center ray)
  std::vector<BoxSpec> boxes;
  BevGridSpec bev;

  CameraIntrinsics intrinsics() const;
};

// Procedurally placed buildings and cars around a straight road.
SceneSpec random_scene(std::uint64_t seed, int num_frames = 8);

struct FrameData {
  std::vector<double> rgb;           // [3×H×W], quantized to 8-bit levels
  std::vector<double> depth;         // [H×W] camera z-depth, meters; 0 = sky
  std::vector<std::uint8_t> fv_sem;  // [H×W]
  Pose world_from_cam;
};

struct SceneBundle {
  SceneSpec spec;
  std::vector<FrameData> frames;         // primary camera
  std::vector<FrameData> frames_cam2;    // empty unless second camera enabled
  BevMap bev_gt;                         // t0-frame footprint

  // Relative pose mapping frame-src camera points into frame-tgt coordinates.
  Pose relative_pose(int src, int tgt) const;
};

// Analytic ray-cast render of every frame plus the t0 BEV labels.
// Deterministic: the same spec yields a bit-identical bundle.
SceneBundle generate_scene(const SceneSpec& spec);

// Evaluates the procedural texture at a world-space surface point. Exposed so
// consistency oracles can compare colors at exact hit points.
void texture_color(const SceneSpec& spec, std::uint8_t class_id, std::uint32_t texture_id,
                   const Vec3& world_point, double rgb_out[3]);

// Analytic nearest-intersection query used by the renderer and by tests.
struct RayHit {
  bool hit = false;
  double t = 0;  // Euclidean distance along the unit ray
  Vec3 point;    // world coordinates
  std::uint8_t class_id = kClassVoid;
  std::uint32_t texture_id = 0;
};
RayHit cast_ray(const SceneSpec& spec, const Vec3& origin, const Vec3& unit_dir);

// On-disk layout: per scene, rgb_XXXX.ppm / depth_XXXX.pgm / sem_XXXX.pgm per
// frame, bev.pgm + bev.json for the t0 labels and poses.json; one manifest
// JSON at the root listing scenes and split fractions.
std::string emit_dataset(const std::vector<SceneSpec>& specs, const std::string& out_dir,
                         double val_fraction = 0.25);

}  // namespace bevforge
