#include "bevforge/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "bevforge/field.hpp"

namespace bevforge {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& at) {
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + at + key + "'");
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void Config::validate() const {
  if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
  if (lr < 0 || momentum < 0 || momentum >= 1 || weight_decay < 0)
    throw ConfigError("config: bad optimizer settings");
  if (lr_decay_at.size() != lr_decay_factor.size())
    throw ConfigError("config: lr_decay at/factor lengths differ");
  if (window < 1) throw ConfigError("config: window must be >= 1");
  if (mask_ratio < 0 || mask_ratio > 1) throw ConfigError("config: mask_ratio outside [0,1]");
  if (patch_size <= 0 || patch_size % kFeatureStride != 0)
    throw ConfigError("config: patch_size must be a positive multiple of 4");
  if (label_fraction <= 0 || label_fraction > 1)
    throw ConfigError("config: label_fraction outside (0,1]");
  if (k < 2) throw ConfigError("config: k must be >= 2");
  if (!(d_max > d_min) || !(d_min > 0)) throw ConfigError("config: need d_max > d_min > 0");
  if (pe_bands < 1 || field_hidden < 1 || recon_hidden < 1 || bev_hidden < 1)
    throw ConfigError("config: model widths must be positive");
  if (num_classes < 2) throw ConfigError("config: need at least two classes");
  if (holdout_frames < 0) throw ConfigError("config: holdout_frames must be >= 0");
  if (holdout_frame < -1) throw ConfigError("config: holdout_frame must be -1 or a frame index");
  alpha_formula_from_string(alpha_formula);
  pathway_mode();
  if (grid.nx < 2 || grid.ny < 1 || grid.nz < 2) throw ConfigError("config: grid too small");
  if (bev.nx < 1 || bev.nz < 1) throw ConfigError("config: bev grid too small");
}

Pathways Config::pathway_mode() const {
  if (pathways == "both") return Pathways::kBoth;
  if (pathways == "geometric") return Pathways::kGeometric;
  if (pathways == "semantic") return Pathways::kSemantic;
  throw ConfigError("config: unknown pathways mode '" + pathways + "'");
}

std::string Config::to_json_string() const {
  json j;
  j["seed"] = seed;
  j["epochs"] = epochs;
  j["lr"] = lr;
  j["momentum"] = momentum;
  j["weight_decay"] = weight_decay;
  j["lr_decay"] = {{"at", lr_decay_at}, {"factor", lr_decay_factor}};
  j["window"] = window;
  j["mask_ratio"] = mask_ratio;
  j["patch_size"] = patch_size;
  j["label_fraction"] = label_fraction;
  j["alpha_formula"] = alpha_formula;
  j["pathways"] = pathways;
  j["holdout_frames"] = holdout_frames;
  j["holdout_frame"] = holdout_frame;
  j["use_spatial_camera"] = use_spatial_camera;
  j["rays"] = {{"k", k}, {"d_min", d_min}, {"d_max", d_max}, {"jitter", jitter}};
  j["field"] = {{"pe_bands", pe_bands}, {"hidden", field_hidden}};
  j["encoder"] = {{"channels", enc_channels}};
  j["heads"] = {{"recon_hidden", recon_hidden}, {"bev_hidden", bev_hidden}};
  j["num_classes"] = num_classes;
  j["grid"] = {{"x", {grid.x_min, grid.x_max}},
               {"y", {grid.y_min, grid.y_max}},
               {"z", {grid.z_min, grid.z_max}},
               {"res", {grid.nx, grid.ny, grid.nz}}};
  j["bev_grid"] = {{"x", {bev.x_min, bev.x_max}},
                   {"z", {bev.z_min, bev.z_max}},
                   {"res", {bev.nx, bev.nz}}};
  return j.dump(2);
}

Config Config::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  reject_unknown(j, {"seed", "epochs", "lr", "momentum", "weight_decay", "lr_decay", "window",
                     "mask_ratio", "patch_size", "label_fraction", "alpha_formula", "pathways",
                     "holdout_frames", "holdout_frame", "use_spatial_camera", "rays", "field", "encoder", "heads",
                     "num_classes", "grid", "bev_grid"},
                 "");
  Config c;
  try {
    maybe(j, "seed", c.seed);
    maybe(j, "epochs", c.epochs);
    maybe(j, "lr", c.lr);
    maybe(j, "momentum", c.momentum);
    maybe(j, "weight_decay", c.weight_decay);
    if (j.contains("lr_decay")) {
      reject_unknown(j["lr_decay"], {"at", "factor"}, "lr_decay.");
      maybe(j["lr_decay"], "at", c.lr_decay_at);
      maybe(j["lr_decay"], "factor", c.lr_decay_factor);
    }
    maybe(j, "window", c.window);
    maybe(j, "mask_ratio", c.mask_ratio);
    maybe(j, "patch_size", c.patch_size);
    maybe(j, "label_fraction", c.label_fraction);
    maybe(j, "alpha_formula", c.alpha_formula);
    maybe(j, "pathways", c.pathways);
    maybe(j, "holdout_frames", c.holdout_frames);
    maybe(j, "holdout_frame", c.holdout_frame);
    maybe(j, "use_spatial_camera", c.use_spatial_camera);
    if (j.contains("rays")) {
      reject_unknown(j["rays"], {"k", "d_min", "d_max", "jitter"}, "rays.");
      maybe(j["rays"], "k", c.k);
      maybe(j["rays"], "d_min", c.d_min);
      maybe(j["rays"], "d_max", c.d_max);
      maybe(j["rays"], "jitter", c.jitter);
    }
    if (j.contains("field")) {
      reject_unknown(j["field"], {"pe_bands", "hidden"}, "field.");
      maybe(j["field"], "pe_bands", c.pe_bands);
      maybe(j["field"], "hidden", c.field_hidden);
    }
    if (j.contains("encoder")) {
      reject_unknown(j["encoder"], {"channels"}, "encoder.");
      maybe(j["encoder"], "channels", c.enc_channels);
    }
    if (j.contains("heads")) {
      reject_unknown(j["heads"], {"recon_hidden", "bev_hidden"}, "heads.");
      maybe(j["heads"], "recon_hidden", c.recon_hidden);
      maybe(j["heads"], "bev_hidden", c.bev_hidden);
    }
    maybe(j, "num_classes", c.num_classes);
    if (j.contains("grid")) {
      reject_unknown(j["grid"], {"x", "y", "z", "res"}, "grid.");
      const auto& g = j["grid"];
      if (g.contains("x")) {
        c.grid.x_min = g["x"][0];
        c.grid.x_max = g["x"][1];
      }
      if (g.contains("y")) {
        c.grid.y_min = g["y"][0];
        c.grid.y_max = g["y"][1];
      }
      if (g.contains("z")) {
        c.grid.z_min = g["z"][0];
        c.grid.z_max = g["z"][1];
      }
      if (g.contains("res")) {
        c.grid.nx = g["res"][0];
        c.grid.ny = g["res"][1];
        c.grid.nz = g["res"][2];
      }
    }
    if (j.contains("bev_grid")) {
      reject_unknown(j["bev_grid"], {"x", "z", "res"}, "bev_grid.");
      const auto& g = j["bev_grid"];
      if (g.contains("x")) {
        c.bev.x_min = g["x"][0];
        c.bev.x_max = g["x"][1];
      }
      if (g.contains("z")) {
        c.bev.z_min = g["z"][0];
        c.bev.z_max = g["z"][1];
      }
      if (g.contains("res")) {
        c.bev.nx = g["res"][0];
        c.bev.nz = g["res"][1];
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: type error: ") + e.what());
  }
  c.validate();
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_string(text);
}

void Config::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("config: cannot write " + path);
  out << to_json_string() << "\n";
}

Config Config::desk() {
  Config c;
  c.patch_size = 24;
  return c;
}

}  // namespace bevforge
