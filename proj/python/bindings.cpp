#include "echofusion/config.hpp"
#include "echofusion/io.hpp"
#include "echofusion/phantom_sim.hpp"
#include "echofusion/pipeline.hpp"
#include "echofusion/sector_geometry.hpp"
#include "echofusion/virtual_camera.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <optional>
#include <string>

namespace py = pybind11;
using namespace echofusion;

namespace {

using Triple = std::array<double, 3>;

Vec3 to_vec3(const Triple& t) { return {t[0], t[1], t[2]}; }
py::tuple to_tuple(const Vec3& v) { return py::make_tuple(v.x(), v.y(), v.z()); }

// Arrays are indexed [z, y, x] so that x varies fastest, matching the voxel layout.
template <typename T>
py::array_t<T> to_array(std::span<const T> data, const Index3& d) {
  py::array_t<T> out({d[2], d[1], d[0]});
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

py::array volume_array(const VoxelVolume& v) {
  switch (v.kind()) {
    case ElementKind::UInt8: return to_array<std::uint8_t>(v.u8(), v.dims());
    case ElementKind::Int16: return to_array<std::int16_t>(v.i16(), v.dims());
    case ElementKind::Float32: return to_array<float>(v.f32(), v.dims());
  }
  throw std::logic_error("unknown element kind");
}

template <typename T>
void fill(std::span<T> dst, const py::array& src) {
  const auto a = py::array_t<T, py::array::c_style | py::array::forcecast>::ensure(src);
  std::copy(a.data(), a.data() + a.size(), dst.begin());
}

VoxelVolume array_volume(const py::array& data, const Triple& spacing, const Triple& origin) {
  if (data.ndim() != 3) throw py::value_error("volume arrays must be 3-dimensional [z, y, x]");
  const Index3 dims{static_cast<int>(data.shape(2)), static_cast<int>(data.shape(1)), static_cast<int>(data.shape(0))};
  const auto dt = data.dtype();
  const ElementKind kind = dt.is(py::dtype::of<std::uint8_t>()) || dt.is(py::dtype::of<bool>()) ? ElementKind::UInt8
                           : dt.is(py::dtype::of<std::int16_t>())                               ? ElementKind::Int16
                                                                                                : ElementKind::Float32;
  VoxelVolume v(dims, to_vec3(spacing), to_vec3(origin), kind);
  switch (kind) {
    case ElementKind::UInt8: fill(v.u8(), data); break;
    case ElementKind::Int16: fill(v.i16(), data); break;
    case ElementKind::Float32: fill(v.f32(), data); break;
  }
  return v;
}

PipelineConfig config_from(const std::optional<fs::path>& path) {
  return path ? load_config(*path) : PipelineConfig{};
}

py::dict record_dict(const TrajectoryRecord& r) {
  py::dict d;
  d["frame"] = r.frame;
  d["status"] = r.status == TrackStatus::Tracked ? "tracked" : "lost";
  py::array_t<double> rot({3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rot.mutable_at(i, j) = r.pose.rotation()(i, j);
  d["rotation"] = rot;
  d["translation_mm"] = to_tuple(r.pose.translation());
  d["inlier_ratio"] = r.inlier_ratio;
  d["mean_residual_mm"] = r.mean_residual_mm;
  return d;
}

}  // namespace

PYBIND11_MODULE(_echofusion, m) {
  m.doc() = "Volumetric fusion and tracking of 3D ultrasound segmentations.";
  m.attr("__version__") = std::string(kVersion);

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<PipelineError>(m, "PipelineError", PyExc_RuntimeError);
  py::register_exception<SectorError>(m, "SectorError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);

  m.def("read_volume", [](const fs::path& path) {
    const VoxelVolume v = read_volume(path);
    return py::make_tuple(volume_array(v), to_tuple(v.spacing()), to_tuple(v.origin()));
  }, py::arg("path"), "Reads a MetaImage volume as (array[z, y, x], spacing, origin).");

  m.def("write_volume", [](const py::array& data, const fs::path& path, const Triple& spacing, const Triple& origin) {
    write_volume(array_volume(data, spacing, origin), path);
  }, py::arg("data"), py::arg("path"), py::arg("spacing") = Triple{1.0, 1.0, 1.0}, py::arg("origin") = Triple{0.0, 0.0, 0.0},
     "Writes uint8, int16 or float32 data (other dtypes become float32) as .mha or .mhd.");

  m.def("dice_score", [](const py::array& a, const py::array& b) {
    const SegmentationVolume sa(array_volume(py::array_t<std::uint8_t>::ensure(a.attr("astype")("uint8")), {1, 1, 1}, {0, 0, 0}));
    const SegmentationVolume sb(array_volume(py::array_t<std::uint8_t>::ensure(b.attr("astype")("uint8")), {1, 1, 1}, {0, 0, 0}));
    return dice_score(sa, sb);
  }, py::arg("a"), py::arg("b"), "Dice overlap of two binary masks; 1 when both are empty.");

  m.def("focal_length_px", &focal_length_px, py::arg("width"), py::arg("view_angle_deg"));

  m.def("estimate_camera_placement", [](const py::array& data, const Triple& spacing, const Triple& origin) {
    const PlacementEstimate est = estimate_placement_detailed(array_volume(data, spacing, origin));
    py::dict d;
    d["distance_mm"] = est.placement.distance;
    d["view_angle_deg"] = est.placement.view_angle_deg;
    d["warnings"] = est.warnings;
    return d;
  }, py::arg("intensity"), py::arg("spacing"), py::arg("origin"),
     "Virtual camera distance and view angle from the sector in an intensity volume.");

  m.def("render_depth", [](const py::array& seg, const Triple& spacing, const Triple& origin, double distance_mm,
                           double view_angle_deg, int image_size, double occupancy_sigma_vox) {
    const VoxelVolume v = array_volume(py::array_t<std::uint8_t>::ensure(seg.attr("astype")("uint8")), spacing, origin);
    const SegmentationVolume s(v);
    const CameraModel cam = build_camera(CameraPlacement{distance_mm, view_angle_deg}, v, image_size, image_size);
    const DepthImage d = occupancy_sigma_vox > 0.0 ? render_depth(smooth_occupancy(s, occupancy_sigma_vox), cam)
                                                   : render_depth(s, cam);
    py::array_t<float> out({d.height, d.width});
    std::copy(d.depth.begin(), d.depth.end(), out.mutable_data());
    return out;
  }, py::arg("segmentation"), py::arg("spacing"), py::arg("origin"), py::arg("distance_mm"), py::arg("view_angle_deg"),
     py::arg("image_size") = kDefaultImageSize, py::arg("occupancy_sigma_vox") = 0.0,
     "Z-depth image in mm of a binary segmentation seen by the virtual camera; 0 marks background.");

  m.def("robustness_metrics", [](const std::vector<bool>& tracked) {
    std::vector<TrackStatus> s;
    for (bool t : tracked) s.push_back(t ? TrackStatus::Tracked : TrackStatus::Lost);
    const RobustnessMetrics r = robustness_metrics(s);
    py::dict d;
    d["total_frames"] = r.total_frames;
    d["num_losses"] = r.num_losses;
    d["longest_run"] = r.longest_run;
    return d;
  }, py::arg("tracked"), "Loss count and longest tracked run of a per-frame tracked flag sequence.");

  m.def("read_trajectory", [](const fs::path& path) {
    py::list out;
    for (const auto& r : read_trajectory(path)) out.append(record_dict(r));
    return out;
  }, py::arg("path"));

  m.def("simulate", [](const fs::path& out_dir, const std::optional<fs::path>& config) {
    SimSummary s;
    {
      py::gil_scoped_release release;
      s = run_sim(config_from(config), out_dir);
    }
    py::dict d;
    d["frames"] = s.frames;
    d["dropouts"] = s.dropouts;
    d["shadowed"] = s.shadowed;
    return d;
  }, py::arg("out_dir"), py::arg("config") = py::none());

  m.def("track", [](const fs::path& frames_dir, const fs::path& out_dir, const std::optional<fs::path>& config) {
    TrackSummary s;
    {
      py::gil_scoped_release release;
      s = run_track(config_from(config), frames_dir, out_dir);
    }
    py::dict d;
    d["distance_mm"] = s.placement.distance;
    d["view_angle_deg"] = s.placement.view_angle_deg;
    d["warnings"] = s.warnings;
    d["num_losses"] = s.robustness.num_losses;
    d["longest_run"] = s.robustness.longest_run;
    d["mesh_vertices"] = s.mesh_vertices;
    d["mesh_triangles"] = s.mesh_triangles;
    return d;
  }, py::arg("frames_dir"), py::arg("out_dir"), py::arg("config") = py::none());

  m.def("fuse", [](const fs::path& frames_dir, const fs::path& trajectory, const fs::path& out_volume,
                   const std::optional<fs::path>& config) {
    FuseSummary s;
    {
      py::gil_scoped_release release;
      s = run_fuse(config_from(config), frames_dir, trajectory, out_volume);
    }
    py::dict d;
    d["frames_used"] = s.frames_used;
    d["dims"] = s.grid.dims;
    d["spacing_mm"] = s.grid.spacing_mm;
    return d;
  }, py::arg("frames_dir"), py::arg("trajectory"), py::arg("out_volume"), py::arg("config") = py::none());

  m.def("evaluate", [](const std::vector<fs::path>& trajectories, const std::optional<fs::path>& ground_truth,
                       const std::optional<fs::path>& seg_pairs, bool as_json) {
    EvalOptions opts;
    opts.trajectories = trajectories;
    opts.ground_truth = ground_truth;
    opts.seg_pairs = seg_pairs;
    const EvalReport r = run_eval(opts);
    return as_json ? format_report_json(r) : format_report_text(r);
  }, py::arg("trajectories"), py::arg("ground_truth") = py::none(), py::arg("seg_pairs") = py::none(),
     py::arg("as_json") = false, "Robustness, pose error and Dice report as text or JSON.");
}
