#include "echofusion/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace echofusion {

namespace pt = boost::property_tree;

namespace {

std::string where(const std::string& section, const std::string& key) { return "[" + section + "] " + key; }

double to_double(const std::string& section, const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(where(section, key) + ": expected a number, got '" + v + "'");
  return out;
}

long long to_int(const std::string& section, const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(where(section, key) + ": expected an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& section, const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(where(section, key) + ": expected a boolean, got '" + v + "'");
}

std::vector<std::string> tokens(const std::string& v) {
  std::istringstream ss(v);
  std::vector<std::string> out;
  std::string t;
  while (ss >> t) out.push_back(t);
  return out;
}

Vec3 to_vec3(const std::string& section, const std::string& key, const std::string& v) {
  const auto t = tokens(v);
  if (t.size() != 3) throw ConfigError(where(section, key) + ": expected 3 numbers");
  return {to_double(section, key, t[0]), to_double(section, key, t[1]), to_double(section, key, t[2])};
}

Index3 to_index3(const std::string& section, const std::string& key, const std::string& v) {
  const auto t = tokens(v);
  if (t.size() == 1) {
    const int n = static_cast<int>(to_int(section, key, t[0]));
    return {n, n, n};
  }
  if (t.size() != 3) throw ConfigError(where(section, key) + ": expected 1 or 3 integers");
  return {static_cast<int>(to_int(section, key, t[0])), static_cast<int>(to_int(section, key, t[1])),
          static_cast<int>(to_int(section, key, t[2]))};
}

std::vector<int> to_int_list(const std::string& section, const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& t : tokens(v)) out.push_back(static_cast<int>(to_int(section, key, t)));
  return out;
}

using Setter = std::function<void(const std::string& value)>;
using Table = std::map<std::string, Setter>;

void apply_section(const pt::ptree& tree, const std::string& section, const Table& table) {
  const auto node = tree.get_child_optional(section);
  if (!node) return;
  for (const auto& [key, child] : *node) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown key " + where(section, key));
    it->second(child.get_value<std::string>());
  }
}

Primitive parse_primitive(const pt::ptree& scene, int index) {
  const std::string p = "p" + std::to_string(index) + ".";
  Primitive prim;
  bool have_kind = false;
  for (const auto& [key, child] : scene) {
    if (key.rfind(p, 0) != 0) continue;
    const std::string field = key.substr(p.size());
    const std::string v = child.get_value<std::string>();
    if (field == "kind") {
      have_kind = true;
      if (v == "sphere") prim.kind = PrimitiveKind::Sphere;
      else if (v == "ellipsoid") prim.kind = PrimitiveKind::Ellipsoid;
      else if (v == "capsule") prim.kind = PrimitiveKind::Capsule;
      else throw ConfigError(where("scene", key) + ": unknown primitive kind '" + v + "'");
    } else if (field == "center") {
      prim.center = to_vec3("scene", key, v);
    } else if (field == "radius") {
      const double r = to_double("scene", key, v);
      prim.radii = Vec3::Constant(r);
    } else if (field == "radii") {
      prim.radii = to_vec3("scene", key, v);
    } else if (field == "axis") {
      prim.axis = to_vec3("scene", key, v);
    } else if (field == "half_length") {
      prim.half_length = to_double("scene", key, v);
    } else if (field == "label") {
      if (v == "foreground") prim.foreground = true;
      else if (v == "background") prim.foreground = false;
      else throw ConfigError(where("scene", key) + ": label must be foreground or background");
    } else if (field == "intensity_mean") {
      prim.intensity_mean = to_double("scene", key, v);
    } else if (field == "intensity_std") {
      prim.intensity_std = to_double("scene", key, v);
    } else {
      throw ConfigError("unknown key " + where("scene", key));
    }
  }
  if (!have_kind) throw ConfigError(where("scene", p + "kind") + ": missing");
  return prim;
}

void parse_scene(const pt::ptree& tree, PipelineConfig& cfg) {
  const auto node = tree.get_child_optional("scene");
  if (!node) return;
  std::string preset;
  int count = -1;
  const Table table{
      {"preset", [&](const std::string& v) { preset = v; }},
      {"count", [&](const std::string& v) { count = static_cast<int>(to_int("scene", "count", v)); }},
      {"medium_intensity", [&](const std::string& v) { cfg.scene.medium_intensity = to_double("scene", "medium_intensity", v); }},
      {"medium_std", [&](const std::string& v) { cfg.scene.medium_std = to_double("scene", "medium_std", v); }},
      {"fan_apex_depth_mm", [&](const std::string& v) { cfg.fan.apex_depth_mm = to_double("scene", "fan_apex_depth_mm", v); }},
      {"fan_angle_xy_deg", [&](const std::string& v) { cfg.fan.angle_xy_deg = to_double("scene", "fan_angle_xy_deg", v); }},
      {"fan_angle_yz_deg", [&](const std::string& v) { cfg.fan.angle_yz_deg = to_double("scene", "fan_angle_yz_deg", v); }},
      {"fan_max_range_mm", [&](const std::string& v) { cfg.fan.max_range_mm = to_double("scene", "fan_max_range_mm", v); }},
      {"volume_dims", [&](const std::string& v) { cfg.volume.dims = to_index3("scene", "volume_dims", v); }},
      {"volume_spacing_mm", [&](const std::string& v) { cfg.volume.spacing_mm = to_double("scene", "volume_spacing_mm", v); }},
  };
  // Scalar keys are applied first so that medium_* survive the preset reset below.
  for (const auto& [key, child] : *node) {
    if (key.size() > 1 && key[0] == 'p' && std::isdigit(static_cast<unsigned char>(key[1]))) continue;
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown key " + where("scene", key));
    it->second(child.get_value<std::string>());
  }
  if (!preset.empty() && count >= 0) throw ConfigError("[scene]: use either preset or count, not both");
  if (!preset.empty()) {
    if (preset != "fetal_head") throw ConfigError("[scene] preset: unknown preset '" + preset + "'");
    const double m = cfg.scene.medium_intensity, s = cfg.scene.medium_std;
    cfg.scene = default_fetal_head();
    cfg.scene.medium_intensity = m;
    cfg.scene.medium_std = s;
  } else if (count >= 0) {
    const double m = cfg.scene.medium_intensity, s = cfg.scene.medium_std;
    cfg.scene = PhantomScene{};
    cfg.scene.medium_intensity = m;
    cfg.scene.medium_std = s;
    for (int i = 0; i < count; ++i) cfg.scene.primitives.push_back(parse_primitive(*node, i));
  }
  // Primitive keys beyond `count` are typos.
  for (const auto& [key, child] : *node) {
    if (!(key.size() > 1 && key[0] == 'p' && std::isdigit(static_cast<unsigned char>(key[1])))) continue;
    const auto dot = key.find('.');
    const long long idx = dot == std::string::npos ? -1 : to_int("scene", key, key.substr(1, dot - 1));
    if (idx < 0 || idx >= count) throw ConfigError("unknown key " + where("scene", key));
  }
  try {
    cfg.scene.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[scene]: ") + e.what());
  }
}

}  // namespace

PipelineConfig parse_config(std::string_view ini_text) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(ini_text)};
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config parse error at line " + std::to_string(e.line()) + ": " + e.message());
  }
  static const std::vector<std::string> kSections{"scene", "trajectory", "artifacts", "sector",
                                                  "camera", "tsdf", "icp", "compound"};
  for (const auto& [name, child] : tree) {
    if (std::find(kSections.begin(), kSections.end(), name) == kSections.end())
      throw ConfigError("unknown section [" + name + "]");
    (void)child;
  }

  PipelineConfig cfg;
  parse_scene(tree, cfg);

  auto& tr = cfg.trajectory;
  apply_section(tree, "trajectory",
                {
                    {"frames", [&](const std::string& v) { tr.frames = static_cast<int>(to_int("trajectory", "frames", v)); }},
                    {"pattern",
                     [&](const std::string& v) {
                       if (v == "orbit") tr.pattern = TrajectoryPattern::Orbit;
                       else if (v == "sweep") tr.pattern = TrajectoryPattern::Sweep;
                       else if (v == "random_walk" || v == "random-walk") tr.pattern = TrajectoryPattern::RandomWalk;
                       else throw ConfigError("[trajectory] pattern: expected orbit, sweep or random_walk");
                     }},
                    {"rotation_step_deg", [&](const std::string& v) { tr.rotation_step_deg = to_double("trajectory", "rotation_step_deg", v); }},
                    {"translation_step_mm", [&](const std::string& v) { tr.translation_step_mm = to_double("trajectory", "translation_step_mm", v); }},
                    {"axis", [&](const std::string& v) { tr.axis = to_vec3("trajectory", "axis", v); }},
                    {"seed", [&](const std::string& v) { tr.seed = static_cast<std::uint64_t>(to_int("trajectory", "seed", v)); }},
                });

  auto& ar = cfg.artifacts;
  apply_section(tree, "artifacts",
                {
                    {"shadow_probability", [&](const std::string& v) { ar.shadow_probability = to_double("artifacts", "shadow_probability", v); }},
                    {"shadow_cone_deg", [&](const std::string& v) { ar.shadow_cone_deg = to_double("artifacts", "shadow_cone_deg", v); }},
                    {"dropout_probability", [&](const std::string& v) { ar.dropout_probability = to_double("artifacts", "dropout_probability", v); }},
                    {"speckle_std", [&](const std::string& v) { ar.speckle_std = to_double("artifacts", "speckle_std", v); }},
                    {"dropout_frames", [&](const std::string& v) { cfg.dropout_frames = to_int_list("artifacts", "dropout_frames", v); }},
                });

  auto& sc = cfg.sector;
  apply_section(tree, "sector",
                {
                    {"threshold", [&](const std::string& v) { sc.threshold = to_double("sector", "threshold", v); }},
                    {"closing_kernel", [&](const std::string& v) { sc.closing_kernel = static_cast<int>(to_int("sector", "closing_kernel", v)); }},
                    {"canny_sigma", [&](const std::string& v) { sc.canny_sigma = to_double("sector", "canny_sigma", v); }},
                    {"hough_angle_step_deg", [&](const std::string& v) { sc.hough_angle_step_deg = to_double("sector", "hough_angle_step_deg", v); }},
                    {"min_line_separation_deg", [&](const std::string& v) { sc.min_line_separation_deg = to_double("sector", "min_line_separation_deg", v); }},
                });

  auto& cam = cfg.camera;
  auto& seg = cfg.segmentation;
  apply_section(tree, "camera",
                {
                    {"mode",
                     [&](const std::string& v) {
                       if (v == "auto") cam.mode = CameraMode::Auto;
                       else if (v == "manual") cam.mode = CameraMode::Manual;
                       else throw ConfigError("[camera] mode: expected auto or manual");
                     }},
                    {"distance_mm", [&](const std::string& v) { cam.distance_mm = to_double("camera", "distance_mm", v); }},
                    {"view_angle_deg", [&](const std::string& v) { cam.view_angle_deg = to_double("camera", "view_angle_deg", v); }},
                    {"image_size", [&](const std::string& v) { cam.image_size = static_cast<int>(to_int("camera", "image_size", v)); }},
                    {"segmentation",
                     [&](const std::string& v) {
                       if (v == "external") seg.mode = SegmentationMode::External;
                       else if (v == "threshold") seg.mode = SegmentationMode::Threshold;
                       else throw ConfigError("[camera] segmentation: expected external or threshold");
                     }},
                    {"segmentation_threshold", [&](const std::string& v) { seg.threshold = to_double("camera", "segmentation_threshold", v); }},
                });

  auto& ts = cfg.tracker.tsdf;
  apply_section(tree, "tsdf",
                {
                    {"dims", [&](const std::string& v) { ts.dims = to_index3("tsdf", "dims", v); }},
                    {"voxel_size_mm", [&](const std::string& v) { ts.voxel_size = to_double("tsdf", "voxel_size_mm", v); }},
                    {"truncation_voxels", [&](const std::string& v) { ts.truncation_voxels = to_double("tsdf", "truncation_voxels", v); }},
                    {"max_weight", [&](const std::string& v) { ts.max_weight = static_cast<float>(to_double("tsdf", "max_weight", v)); }},
                    {"fit_scale", [&](const std::string& v) { ts.fit_scale = to_double("tsdf", "fit_scale", v); }},
                });

  auto& tk = cfg.tracker;
  auto& icp = cfg.tracker.icp;
  apply_section(tree, "icp",
                {
                    {"pyramid_levels", [&](const std::string& v) { icp.pyramid_levels = static_cast<int>(to_int("icp", "pyramid_levels", v)); }},
                    {"iterations", [&](const std::string& v) { icp.iterations = to_int_list("icp", "iterations", v); }},
                    {"distance_gate_mm", [&](const std::string& v) { icp.distance_gate_mm = to_double("icp", "distance_gate_mm", v); }},
                    {"normal_gate_deg", [&](const std::string& v) { icp.normal_gate_deg = to_double("icp", "normal_gate_deg", v); }},
                    {"min_inliers", [&](const std::string& v) { icp.min_inliers = static_cast<int>(to_int("icp", "min_inliers", v)); }},
                    {"degenerate_eigen_ratio", [&](const std::string& v) { icp.degenerate_eigen_ratio = to_double("icp", "degenerate_eigen_ratio", v); }},
                    {"damping_ratio", [&](const std::string& v) { icp.damping_ratio = to_double("icp", "damping_ratio", v); }},
                    {"min_inlier_ratio", [&](const std::string& v) { tk.min_inlier_ratio = to_double("icp", "min_inlier_ratio", v); }},
                    {"max_residual_mm", [&](const std::string& v) { tk.max_residual_mm = to_double("icp", "max_residual_mm", v); }},
                    {"occupancy_sigma_vox", [&](const std::string& v) { tk.occupancy_sigma_vox = to_double("icp", "occupancy_sigma_vox", v); }},
                    {"smooth_depth", [&](const std::string& v) { tk.smooth_depth = to_bool("icp", "smooth_depth", v); }},
                    {"smooth_sigma_space_px", [&](const std::string& v) { tk.smooth_sigma_space_px = to_double("icp", "smooth_sigma_space_px", v); }},
                    {"smooth_sigma_depth_mm", [&](const std::string& v) { tk.smooth_sigma_depth_mm = to_double("icp", "smooth_sigma_depth_mm", v); }},
                });
  if (icp.iterations.empty()) throw ConfigError("[icp] iterations: needs at least one value");

  auto& co = cfg.compound;
  apply_section(tree, "compound",
                {
                    {"support_threshold", [&](const std::string& v) { co.support_threshold = to_double("compound", "support_threshold", v); }},
                    {"support_closing_kernel", [&](const std::string& v) { co.support_closing_kernel = static_cast<int>(to_int("compound", "support_closing_kernel", v)); }},
                    {"spacing_mm", [&](const std::string& v) { co.spacing_mm = to_double("compound", "spacing_mm", v); }},
                    {"max_dim", [&](const std::string& v) { co.max_dim = static_cast<int>(to_int("compound", "max_dim", v)); }},
                });

  try {
    cfg.trajectory.validate();
    cfg.artifacts.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (cfg.volume.dims[0] <= 0 || cfg.volume.dims[1] <= 0 || cfg.volume.dims[2] <= 0 || !(cfg.volume.spacing_mm > 0.0))
    throw ConfigError("[scene]: volume dims and spacing must be positive");
  for (int a = 0; a < 3; ++a)
    if (cfg.tracker.tsdf.dims[a] < 2) throw ConfigError("[tsdf] dims: each dimension must be at least 2");
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in || std::filesystem::is_directory(path)) throw ConfigError("config not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace echofusion
