#include "bevforge/synthscene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "bevforge/image_io.hpp"
#include "bevforge/rng.hpp"

namespace bevforge {
namespace {

double hash01(std::uint64_t seed, std::int64_t ix, std::int64_t iy, std::int64_t iz,
              std::uint32_t channel) {
  std::uint64_t h = mix_seed(seed, static_cast<std::uint64_t>(ix) * 0x9e3779b1u + channel);
  h = mix_seed(h, static_cast<std::uint64_t>(iy) + 0x85ebca6bULL);
  h = mix_seed(h, static_cast<std::uint64_t>(iz) + 0xc2b2ae35ULL);
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

double smooth(double f) { return f * f * (3.0 - 2.0 * f); }

// C1-continuous value noise on the integer lattice of p.
double value_noise(std::uint64_t seed, std::uint32_t channel, const Vec3& p) {
  const double fx = std::floor(p.x), fy = std::floor(p.y), fz = std::floor(p.z);
  const auto ix = static_cast<std::int64_t>(fx);
  const auto iy = static_cast<std::int64_t>(fy);
  const auto iz = static_cast<std::int64_t>(fz);
  const double wx = smooth(p.x - fx), wy = smooth(p.y - fy), wz = smooth(p.z - fz);
  double acc = 0.0;
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz) {
        const double w =
            (dx ? wx : 1 - wx) * (dy ? wy : 1 - wy) * (dz ? wz : 1 - wz);
        acc += w * hash01(seed, ix + dx, iy + dy, iz + dz, channel);
      }
  return acc;
}

const double kClassBase[kNumClasses][3] = {
    {0.42, 0.42, 0.46},  // road
    {0.30, 0.48, 0.26},  // terrain
    {0.58, 0.48, 0.40},  // building
    {0.62, 0.26, 0.24},  // car
    {0.55, 0.65, 0.80},  // void / sky
};

double quantize8_level(double v) {
  return std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

struct Aabb {
  Vec3 lo, hi;
};

Aabb box_bounds(const BoxSpec& b) {
  return {{b.center.x - b.size.x / 2, b.center.y - b.size.y / 2, b.center.z - b.size.z / 2},
          {b.center.x + b.size.x / 2, b.center.y + b.size.y / 2, b.center.z + b.size.z / 2}};
}

// Slab intersection; returns the entry distance or a negative miss.
double intersect_aabb(const Aabb& b, const Vec3& o, const Vec3& d) {
  double t0 = 0.0, t1 = 1e30;
  const double os[3] = {o.x, o.y, o.z};
  const double ds[3] = {d.x, d.y, d.z};
  const double lo[3] = {b.lo.x, b.lo.y, b.lo.z};
  const double hi[3] = {b.hi.x, b.hi.y, b.hi.z};
  for (int a = 0; a < 3; ++a) {
    if (std::fabs(ds[a]) < 1e-12) {
      if (os[a] < lo[a] || os[a] > hi[a]) return -1.0;
      continue;
    }
    double ta = (lo[a] - os[a]) / ds[a];
    double tb = (hi[a] - os[a]) / ds[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return -1.0;
  }
  return t0 > 1e-9 ? t0 : -1.0;
}

Pose frame_pose(const SceneSpec& spec, int frame) {
  return {Mat3::rot_y(spec.yaw_per_frame * frame), {0.0, 0.0, spec.step_z * frame}};
}

std::uint8_t ground_class(const SceneSpec& spec, double x) {
  return std::fabs(x) <= spec.road_halfwidth ? kClassRoad : kClassTerrain;
}

FrameData render_frame(const SceneSpec& spec, const Pose& world_from_cam) {
  const CameraIntrinsics K = spec.intrinsics();
  FrameData f;
  f.world_from_cam = world_from_cam;
  const std::size_t plane = static_cast<std::size_t>(spec.height) * spec.width;
  f.rgb.assign(3 * plane, 0.0);
  f.depth.assign(plane, 0.0);
  f.fv_sem.assign(plane, kClassVoid);
  const int ss = std::max(1, spec.supersample);
  double rgb[3], sub[3];
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      const std::size_t at = static_cast<std::size_t>(y) * spec.width + x;
      // depth and semantics come from the exact center ray
      const Vec3 dir_cam = unproject(K, {static_cast<double>(x), static_cast<double>(y)}, 1.0)
                               .normalized();
      RayHit center = cast_ray(spec, world_from_cam.translation,
                               world_from_cam.rotation * dir_cam);
      if (center.hit && center.t * dir_cam.z > spec.far_limit) center.hit = false;
      if (center.hit) {
        f.depth[at] = center.t * dir_cam.z;
        f.fv_sem[at] = center.class_id;
      }
      // color is box-filtered over an ss×ss subpixel lattice
      rgb[0] = rgb[1] = rgb[2] = 0.0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const double u = x + (sx + 0.5) / ss - 0.5;
          const double v = y + (sy + 0.5) / ss - 0.5;
          const Vec3 d_cam = unproject(K, {u, v}, 1.0).normalized();
          RayHit hit = cast_ray(spec, world_from_cam.translation,
                                world_from_cam.rotation * d_cam);
          if (hit.hit && hit.t * d_cam.z > spec.far_limit) hit.hit = false;
          if (hit.hit) {
            texture_color(spec, hit.class_id, hit.texture_id, hit.point, sub);
          } else {
            for (int c = 0; c < 3; ++c) sub[c] = kClassBase[kClassVoid][c];
          }
          for (int c = 0; c < 3; ++c) rgb[c] += sub[c];
        }
      for (int c = 0; c < 3; ++c) f.rgb[c * plane + at] = quantize8_level(rgb[c] / (ss * ss));
    }
  return f;
}

}  // namespace

CameraIntrinsics SceneSpec::intrinsics() const {
  CameraIntrinsics k;
  k.fx = fx;
  k.fy = fy;
  k.cx = width / 2.0;
  k.cy = height / 2.0;
  k.width = width;
  k.height = height;
  return k;
}

void texture_color(const SceneSpec& spec, std::uint8_t class_id, std::uint32_t texture_id,
                   const Vec3& world_point, double rgb_out[3]) {
  const std::uint64_t seed = mix_seed(spec.seed, 0xbeef0000ULL + texture_id);
  const double s1 = spec.texture_scale, s2 = spec.texture_scale * 2.3;
  for (int c = 0; c < 3; ++c) {
    const double n1 = value_noise(seed, c, world_point * s1);
    const double n2 = value_noise(seed, 16 + c, world_point * s2);
    const double n = 0.65 * n1 + 0.35 * n2;
    rgb_out[c] = std::clamp(kClassBase[class_id][c] * (0.45 + 1.1 * n), 0.0, 1.0);
  }
}

RayHit cast_ray(const SceneSpec& spec, const Vec3& origin, const Vec3& dir) {
  RayHit best;
  double best_t = 1e30;
  // ground plane y = camera_height (y points down, camera starts at y = 0)
  if (dir.y > 1e-12) {
    const double t = (spec.camera_height - origin.y) / dir.y;
    if (t > 1e-9 && t < best_t) {
      best_t = t;
      best.hit = true;
      best.t = t;
      best.point = origin + dir * t;
      best.class_id = ground_class(spec, best.point.x);
      best.texture_id = best.class_id == kClassRoad ? 1u : 2u;
    }
  }
  for (std::size_t i = 0; i < spec.boxes.size(); ++i) {
    const BoxSpec& b = spec.boxes[i];
    const double t = intersect_aabb(box_bounds(b), origin, dir);
    if (t > 0 && t < best_t) {
      best_t = t;
      best.hit = true;
      best.t = t;
      best.point = origin + dir * t;
      best.class_id = b.class_id;
      best.texture_id = b.texture_id;
    }
  }
  return best;
}

SceneSpec random_scene(std::uint64_t seed, int num_frames) {
  SceneSpec spec;
  spec.seed = seed;
  spec.num_frames = num_frames;
  Rng rng(mix_seed(seed, 0x5ce9eULL));

  auto overlaps = [&](const BoxSpec& b) {
    const Aabb nb = box_bounds(b);
    for (const BoxSpec& o : spec.boxes) {
      const Aabb ob = box_bounds(o);
      const bool apart = nb.hi.x < ob.lo.x - 0.3 || nb.lo.x > ob.hi.x + 0.3 ||
                         nb.hi.z < ob.lo.z - 0.3 || nb.lo.z > ob.hi.z + 0.3;
      if (!apart) return true;
    }
    return false;
  };

  const int n_buildings = 3 + static_cast<int>(rng.next_index(3));
  for (int i = 0; i < n_buildings; ++i) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      BoxSpec b;
      const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
      b.size = {rng.uniform(2.5, 5.0), rng.uniform(2.5, 5.0), rng.uniform(2.5, 5.0)};
      b.center = {side * rng.uniform(4.8, 7.0), spec.camera_height - b.size.y / 2,
                  rng.uniform(4.0, 18.0)};
      b.class_id = kClassBuilding;
      b.texture_id = 100 + i;
      if (!overlaps(b)) {
        spec.boxes.push_back(b);
        break;
      }
    }
  }
  const int n_cars = 1 + static_cast<int>(rng.next_index(3));
  for (int i = 0; i < n_cars; ++i) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      BoxSpec b;
      const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
      b.size = {rng.uniform(1.7, 2.0), rng.uniform(1.3, 1.6), rng.uniform(3.8, 4.4)};
      b.center = {side * rng.uniform(1.9, 3.1), spec.camera_height - b.size.y / 2,
                  rng.uniform(5.0, 16.0)};
      b.class_id = kClassCar;
      b.texture_id = 200 + i;
      if (!overlaps(b)) {
        spec.boxes.push_back(b);
        break;
      }
    }
  }
  return spec;
}

Pose SceneBundle::relative_pose(int src, int tgt) const {
  return compose(invert(frames[tgt].world_from_cam), frames[src].world_from_cam);
}

SceneBundle generate_scene(const SceneSpec& spec) {
  if (spec.num_frames < 1) throw DegenerateSpec("generate_scene: need at least one frame");
  if (spec.fx <= 0 || spec.fy <= 0 || spec.width <= 0 || spec.height <= 0)
    throw DegenerateSpec("generate_scene: bad camera spec");
  for (const BoxSpec& b : spec.boxes) {
    if (b.size.x <= 0 || b.size.y <= 0 || b.size.z <= 0)
      throw DegenerateSpec("generate_scene: box with non-positive size");
    if (b.center.y + b.size.y / 2 > spec.camera_height + 1e-9)
      throw DegenerateSpec("generate_scene: box extends below the ground plane");
  }

  SceneBundle bundle;
  bundle.spec = spec;
  for (int i = 0; i < spec.num_frames; ++i) {
    const Pose wfc = frame_pose(spec, i);
    bundle.frames.push_back(render_frame(spec, wfc));
    if (spec.second_camera_offset_x != 0.0) {
      Pose cam2 = wfc;
      cam2.translation =
          wfc.translation + wfc.rotation * Vec3{spec.second_camera_offset_x, 0.0, 0.0};
      bundle.frames_cam2.push_back(render_frame(spec, cam2));
    }
  }

  // BEV labels on the t0 footprint (frame 0 camera frame == world frame).
  bundle.bev_gt.nx = spec.bev.nx;
  bundle.bev_gt.nz = spec.bev.nz;
  bundle.bev_gt.num_classes = kNumClasses;
  bundle.bev_gt.classes.assign(static_cast<std::size_t>(spec.bev.nx) * spec.bev.nz, kIgnoreIndex);
  for (int ix = 0; ix < spec.bev.nx; ++ix)
    for (int iz = 0; iz < spec.bev.nz; ++iz) {
      const double x = spec.bev.cell_x(ix), z = spec.bev.cell_z(iz);
      std::uint8_t cls = ground_class(spec, x);
      for (const BoxSpec& b : spec.boxes) {
        const Aabb bb = box_bounds(b);
        if (x >= bb.lo.x && x <= bb.hi.x && z >= bb.lo.z && z <= bb.hi.z) {
          cls = b.class_id;
          break;
        }
      }
      bundle.bev_gt.classes[static_cast<std::size_t>(ix) * spec.bev.nz + iz] = cls;
    }
  return bundle;
}

std::string emit_dataset(const std::vector<SceneSpec>& specs, const std::string& out_dir,
                         double val_fraction) {
  namespace fs = std::filesystem;
  using nlohmann::json;
  if (specs.empty()) throw DegenerateSpec("emit_dataset: no scenes");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("emit_dataset: cannot create " + out_dir);

  const int n_val =
      val_fraction <= 0.0
          ? 0
          : std::max(specs.size() > 1 ? 1 : 0,
                     static_cast<int>(
                         std::llround(val_fraction * static_cast<double>(specs.size()))));

  json manifest;
  manifest["schema_version"] = 1;
  json scenes = json::array();

  char name[32];
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const SceneBundle bundle = generate_scene(specs[i]);
    std::snprintf(name, sizeof name, "scene_%04zu", i);
    const fs::path dir = fs::path(out_dir) / name;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("emit_dataset: cannot create " + dir.string());

    json poses;
    const CameraIntrinsics K = specs[i].intrinsics();
    poses["intrinsics"] = {{"fx", K.fx}, {"fy", K.fy},     {"cx", K.cx},
                           {"cy", K.cy}, {"width", K.width}, {"height", K.height}};
    json frames = json::array();
    char fname[48];
    auto write_frame = [&](const FrameData& f, std::size_t fi, const char* rgb_p,
                           const char* depth_p, const char* sem_p) {
      std::snprintf(fname, sizeof fname, "%s%04zu.ppm", rgb_p, fi);
      write_ppm((dir / fname).string(), f.rgb, specs[i].height, specs[i].width);
      std::snprintf(fname, sizeof fname, "%s%04zu.pgm", depth_p, fi);
      write_pgm16((dir / fname).string(), f.depth, specs[i].height, specs[i].width);
      std::snprintf(fname, sizeof fname, "%s%04zu.pgm", sem_p, fi);
      write_pgm8((dir / fname).string(), f.fv_sem, specs[i].height, specs[i].width);
      json fr;
      fr["world_from_cam_R"] = f.world_from_cam.rotation.m;
      fr["world_from_cam_t"] = {f.world_from_cam.translation.x, f.world_from_cam.translation.y,
                                f.world_from_cam.translation.z};
      return fr;
    };
    for (std::size_t fi = 0; fi < bundle.frames.size(); ++fi)
      frames.push_back(write_frame(bundle.frames[fi], fi, "rgb_", "depth_", "sem_"));
    poses["frames"] = frames;
    if (!bundle.frames_cam2.empty()) {
      json frames2 = json::array();
      for (std::size_t fi = 0; fi < bundle.frames_cam2.size(); ++fi)
        frames2.push_back(write_frame(bundle.frames_cam2[fi], fi, "rgb2_", "depth2_", "sem2_"));
      poses["frames_cam2"] = frames2;
    }
    {
      std::ofstream out(dir / "poses.json");
      if (!out) throw IoError("emit_dataset: cannot write poses.json");
      out << poses.dump(2) << "\n";
    }

    write_pgm8((dir / "bev.pgm").string(), bundle.bev_gt.classes, specs[i].bev.nx,
               specs[i].bev.nz);
    json bev_side;
    bev_side["ignore_index"] = kIgnoreIndex;
    bev_side["palette"] = json::array({
        json{{"id", 0}, {"name", "road"}, {"rgb", {108, 108, 118}}},
        json{{"id", 1}, {"name", "terrain"}, {"rgb", {77, 122, 66}}},
        json{{"id", 2}, {"name", "building"}, {"rgb", {148, 122, 102}}},
        json{{"id", 3}, {"name", "car"}, {"rgb", {158, 66, 61}}},
        json{{"id", 4}, {"name", "void"}, {"rgb", {140, 166, 204}}},
    });
    bev_side["grid"] = {{"x_min", specs[i].bev.x_min}, {"x_max", specs[i].bev.x_max},
                        {"z_min", specs[i].bev.z_min}, {"z_max", specs[i].bev.z_max},
                        {"nx", specs[i].bev.nx},       {"nz", specs[i].bev.nz}};
    {
      std::ofstream out(dir / "bev.json");
      if (!out) throw IoError("emit_dataset: cannot write bev.json");
      out << bev_side.dump(2) << "\n";
    }

    json scene;
    scene["name"] = name;
    scene["frames"] = specs[i].num_frames;
    scene["seed"] = specs[i].seed;
    scene["split"] = (i + n_val >= specs.size()) ? "val" : "train";
    scene["width"] = specs[i].width;
    scene["height"] = specs[i].height;
    scenes.push_back(scene);
  }
  manifest["scenes"] = scenes;
  const double vf = static_cast<double>(n_val) / static_cast<double>(specs.size());
  manifest["splits"] = {{"train", 1.0 - vf}, {"val", vf}};

  const fs::path mpath = fs::path(out_dir) / "manifest.json";
  std::ofstream out(mpath);
  if (!out) throw IoError("emit_dataset: cannot write manifest.json");
  out << manifest.dump(2) << "\n";
  return mpath.string();
}

}  // namespace bevforge
