// echofusion: sim | track | fuse | eval
#include "echofusion/pipeline.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace echofusion;

namespace {

PipelineConfig config_or_default(const std::string& path) {
  return path.empty() ? PipelineConfig{} : load_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segmentation-driven ultrasound volume tracking, fusion and compounding"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  std::string config_path;

  auto* sim = app.add_subcommand("sim", "Render a synthetic phantom sequence with ground-truth poses");
  std::string sim_out;
  sim->add_option("--config", config_path, "INI configuration file")->required();
  sim->add_option("--out", sim_out, "Output directory")->required();

  auto* track = app.add_subcommand("track", "Track a frame sequence and build the surface model");
  std::string frames_dir, track_out, seg_mode = "external", camera_mode = "auto";
  double distance = 0.0, view_angle = 0.0, seg_threshold = -1.0;
  track->add_option("--frames", frames_dir, "Directory of *_intensity.mha / *_seg.mha pairs")->required();
  track->add_option("--out", track_out, "Output directory")->required();
  track->add_option("--config", config_path, "INI configuration file");
  track->add_option("--segmentation", seg_mode, "external | threshold")
      ->check(CLI::IsMember({"external", "threshold"}));
  track->add_option("--seg-threshold", seg_threshold, "Intensity threshold for --segmentation threshold");
  track->add_option("--camera", camera_mode, "auto | manual")->check(CLI::IsMember({"auto", "manual"}));
  track->add_option("--distance", distance, "Manual camera distance behind the volume origin (mm)");
  track->add_option("--view-angle", view_angle, "Manual camera view angle (degrees)");

  auto* fuse = app.add_subcommand("fuse", "Compound tracked frames into one volume");
  std::string fuse_frames, fuse_traj, fuse_out;
  fuse->add_option("--frames", fuse_frames, "Frame directory")->required();
  fuse->add_option("--trajectory", fuse_traj, "trajectory.jsonl from track")->required();
  fuse->add_option("--out", fuse_out, "Output volume (.mha)")->required();
  fuse->add_option("--config", config_path, "INI configuration file");

  auto* eval = app.add_subcommand("eval", "Robustness, pose error and Dice report");
  std::vector<std::string> eval_traj;
  std::string eval_gt, eval_seg, eval_json;
  eval->add_option("--trajectory", eval_traj, "Trajectory JSONL (repeatable)");
  eval->add_option("--gt", eval_gt, "Ground-truth trajectory JSONL");
  eval->add_option("--seg-pairs", eval_seg, "Directory of <name>_pred.mha / <name>_gt.mha");
  eval->add_option("--json", eval_json, "Also write the JSON report to this file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      const SimSummary s = run_sim(load_config(config_path), sim_out);
      std::cout << "frames " << s.frames << ", dropouts " << s.dropouts << ", shadowed " << s.shadowed << "\n";
    } else if (*track) {
      PipelineConfig cfg = config_or_default(config_path);
      if (track->count("--segmentation"))
        cfg.segmentation.mode = seg_mode == "threshold" ? SegmentationMode::Threshold : SegmentationMode::External;
      if (seg_threshold >= 0.0) cfg.segmentation.threshold = seg_threshold;
      if (track->count("--camera")) cfg.camera.mode = camera_mode == "manual" ? CameraMode::Manual : CameraMode::Auto;
      if (track->count("--distance")) cfg.camera.distance_mm = distance;
      if (track->count("--view-angle")) cfg.camera.view_angle_deg = view_angle;
      const TrackSummary s = run_track(cfg, frames_dir, track_out);
      for (const auto& w : s.warnings) std::cerr << "warning: " << w << "\n";
      std::cout << "camera distance " << s.placement.distance << " mm, view angle " << s.placement.view_angle_deg
                << " deg\n";
      std::cout << "frames " << s.robustness.total_frames << ", losses " << s.robustness.num_losses
                << ", longest run " << s.robustness.longest_run << "\n";
      std::cout << "mesh " << s.mesh_vertices << " vertices, " << s.mesh_triangles << " triangles\n";
    } else if (*fuse) {
      const FuseSummary s = run_fuse(config_or_default(config_path), fuse_frames, fuse_traj, fuse_out);
      std::cout << "compounded " << s.frames_used << " frames into " << s.grid.dims[0] << "x" << s.grid.dims[1] << "x"
                << s.grid.dims[2] << " at " << s.grid.spacing_mm << " mm\n";
    } else if (*eval) {
      EvalOptions opts;
      for (const auto& t : eval_traj) opts.trajectories.emplace_back(t);
      if (!eval_gt.empty()) opts.ground_truth = eval_gt;
      if (!eval_seg.empty()) opts.seg_pairs = eval_seg;
      if (opts.trajectories.empty() && !opts.seg_pairs) throw PipelineError("eval needs --trajectory or --seg-pairs");
      const EvalReport report = run_eval(opts);
      const std::string json = format_report_json(report);
      std::cout << format_report_text(report) << "\n" << json;
      if (!eval_json.empty()) {
        std::ofstream out(eval_json, std::ios::binary);
        out << json;
        if (!out) throw PipelineError("cannot write " + eval_json);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
