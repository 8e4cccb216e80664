#include "echofusion/pipeline.hpp"

#include "echofusion/phantom_sim.hpp"
#include "echofusion/virtual_camera.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace echofusion {

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw PipelineError("cannot create directory " + dir.string() + ": " + ec.message());
}

constexpr std::string_view kIntensitySuffix = "_intensity.mha";
constexpr std::string_view kSegSuffix = "_seg.mha";

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

CameraPlacement choose_placement(const PipelineConfig& cfg, const std::vector<FramePaths>& frames,
                                 std::vector<std::string>& warnings) {
  if (cfg.camera.mode == CameraMode::Manual) {
    if (!(cfg.camera.distance_mm > 0.0) || !(cfg.camera.view_angle_deg > 0.0 && cfg.camera.view_angle_deg < 180.0))
      throw PipelineError("manual camera needs distance_mm > 0 and view_angle_deg in (0, 180)");
    return {cfg.camera.distance_mm, cfg.camera.view_angle_deg};
  }
  // The first frame whose central slices show a sector decides the placement.
  std::string last_error;
  for (const auto& f : frames) {
    try {
      const PlacementEstimate est = estimate_placement_detailed(read_volume(f.intensity), cfg.sector);
      warnings.insert(warnings.end(), est.warnings.begin(), est.warnings.end());
      return est.placement;
    } catch (const SectorError& e) {
      last_error = e.what();
    }
  }
  throw PipelineError("camera placement failed: " + last_error);
}

SegmentationVolume load_segmentation(const PipelineConfig& cfg, const FramePaths& f, const VoxelVolume& intensity) {
  if (cfg.segmentation.mode == SegmentationMode::Threshold)
    return threshold_discriminator(intensity, cfg.segmentation.threshold, cfg.segmentation.closing_kernel);
  if (f.segmentation.empty()) throw PipelineError("missing segmentation for " + f.intensity.filename().string());
  return SegmentationVolume(read_volume(f.segmentation));
}

std::string format_number(double v, int decimals) {
  if (v == std::round(v) && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(std::llround(v)));
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

nlohmann::ordered_json stats_json(const SeriesStats& s) {
  nlohmann::ordered_json j;
  j["count"] = s.count;
  j["mean"] = s.mean;
  j["std"] = s.std;
  j["median"] = s.median;
  j["min"] = s.min;
  j["max"] = s.max;
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// sim

std::string frame_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04d", index);
  return buf;
}

SimSummary run_sim(const PipelineConfig& cfg, const fs::path& out_dir) {
  ensure_dir(out_dir);
  const std::vector<RigidPose> poses = generate_trajectory(cfg.trajectory, cfg.scene, cfg.fan);
  SimSummary summary;
  std::vector<TrajectoryRecord> gt;
  for (int k = 0; k < static_cast<int>(poses.size()); ++k) {
    ArtifactSpec artifacts = cfg.artifacts;
    if (std::find(cfg.dropout_frames.begin(), cfg.dropout_frames.end(), k) != cfg.dropout_frames.end())
      artifacts.dropout_probability = 1.0;
    const SimFrame frame =
        render_frame(cfg.scene, poses[k], cfg.fan, cfg.volume, artifacts, frame_seed(cfg.trajectory.seed, k));
    write_volume(frame.intensity, out_dir / (frame_stem(k) + std::string(kIntensitySuffix)));
    write_volume(frame.segmentation.volume(), out_dir / (frame_stem(k) + std::string(kSegSuffix)));
    TrajectoryRecord rec;
    rec.frame = k;
    rec.status = TrackStatus::Tracked;
    rec.pose = frame.pose;
    rec.inlier_ratio = 1.0;
    gt.push_back(rec);
    summary.dropouts += frame.dropout;
    summary.shadowed += frame.shadowed;
  }
  write_trajectory(gt, out_dir / "gt.jsonl");
  summary.frames = static_cast<int>(poses.size());
  return summary;
}

// ---------------------------------------------------------------------------
// track

std::vector<FramePaths> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw PipelineError("frames directory not found: " + dir.string());
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && ends_with(name, kIntensitySuffix)) names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  std::vector<FramePaths> out;
  for (const auto& name : names) {
    FramePaths f;
    f.intensity = dir / name;
    const fs::path seg = dir / (name.substr(0, name.size() - kIntensitySuffix.size()) + std::string(kSegSuffix));
    if (fs::exists(seg)) f.segmentation = seg;
    out.push_back(f);
  }
  return out;
}

TrackSummary run_track(const PipelineConfig& cfg, const fs::path& frames_dir, const fs::path& out_dir) {
  const std::vector<FramePaths> frames = list_frames(frames_dir);
  if (frames.empty()) throw PipelineError("no frames found in " + frames_dir.string());
  ensure_dir(out_dir);

  TrackSummary summary;
  summary.placement = choose_placement(cfg, frames, summary.warnings);
  const VoxelVolume first = read_volume(frames.front().intensity);
  const CameraModel camera = build_camera(summary.placement, first, cfg.camera.image_size, cfg.camera.image_size);
  Tracker tracker(camera, cfg.tracker);

  std::vector<TrackStatus> statuses;
  for (int k = 0; k < static_cast<int>(frames.size()); ++k) {
    TrajectoryRecord rec;
    rec.frame = k;
    try {
      const VoxelVolume intensity = read_volume(frames[k].intensity);
      const SegmentationVolume seg = load_segmentation(cfg, frames[k], intensity);
      const TrackResult r = tracker.track_frame(seg);
      rec.status = r.status;
      rec.pose = r.pose;
      rec.inlier_ratio = r.inlier_ratio;
      rec.mean_residual_mm = r.mean_residual;
    } catch (const std::exception& e) {
      rec.status = TrackStatus::Lost;
      rec.pose = tracker.pose();
      summary.warnings.push_back(frames[k].intensity.filename().string() + ": " + e.what());
    }
    statuses.push_back(rec.status);
    summary.trajectory.push_back(rec);
  }
  summary.robustness = robustness_metrics(statuses);

  write_trajectory(summary.trajectory, out_dir / "trajectory.jsonl");
  TriangleMesh mesh;
  if (tracker.grid()) {
    write_tsdf_snapshot(*tracker.grid(), out_dir / "model");
    mesh = extract_mesh(*tracker.grid());
  }
  write_ply(mesh, out_dir / "mesh.ply");
  summary.mesh_vertices = mesh.vertices.size();
  summary.mesh_triangles = mesh.triangles.size();
  return summary;
}

// ---------------------------------------------------------------------------
// fuse

FuseSummary run_fuse(const PipelineConfig& cfg, const fs::path& frames_dir, const fs::path& trajectory,
                     const fs::path& out_volume) {
  const std::vector<FramePaths> frames = list_frames(frames_dir);
  const std::vector<TrajectoryRecord> traj = read_trajectory(trajectory);
  if (traj.size() != frames.size())
    throw PipelineError("trajectory has " + std::to_string(traj.size()) + " records but " +
                        std::to_string(frames.size()) + " frames were found");
  std::vector<VoxelVolume> volumes;
  std::vector<RigidPose> poses;
  for (const auto& rec : traj) {
    if (rec.status != TrackStatus::Tracked) continue;
    if (rec.frame < 0 || rec.frame >= static_cast<int>(frames.size()))
      throw PipelineError("trajectory frame index out of range: " + std::to_string(rec.frame));
    volumes.push_back(read_volume(frames[rec.frame].intensity));
    poses.push_back(rec.pose);
  }
  if (volumes.empty()) throw PipelineError("no tracked frames to compound");
  std::vector<CompoundFrame> input;
  for (std::size_t i = 0; i < volumes.size(); ++i) input.push_back({&volumes[i], poses[i]});

  FuseSummary summary;
  summary.frames_used = static_cast<int>(input.size());
  summary.grid = auto_grid_spec(input, cfg.compound);
  const CompoundResult result = compound(input, summary.grid, cfg.compound);
  if (out_volume.has_parent_path()) ensure_dir(out_volume.parent_path());
  write_volume(result.intensity, out_volume);
  fs::path stem = out_volume;
  stem.replace_extension();
  write_orthogonal_slices(result.intensity, stem);
  return summary;
}

// ---------------------------------------------------------------------------
// eval

SeriesStats summarize(std::vector<double> values) {
  SeriesStats s;
  s.count = static_cast<int>(values.size());
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  s.min = values.front();
  s.max = values.back();
  const std::size_t n = values.size();
  s.median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(n - 1));
  }
  return s;
}

PoseErrors pose_errors(const std::vector<TrajectoryRecord>& estimate, const std::vector<TrajectoryRecord>& truth) {
  std::map<int, RigidPose> gt;
  for (const auto& r : truth) gt[r.frame] = r.pose;
  PoseErrors out;
  const TrajectoryRecord* ref = nullptr;
  for (const auto& r : estimate)
    if (r.status == TrackStatus::Tracked && gt.count(r.frame)) {
      ref = &r;
      break;
    }
  if (!ref) return out;
  const RigidPose est_ref_inv = ref->pose.inverse();
  const RigidPose gt_ref_inv = gt.at(ref->frame).inverse();
  double rot_sq = 0.0, trans_sq = 0.0;
  for (const auto& r : estimate) {
    if (r.status != TrackStatus::Tracked || !gt.count(r.frame)) continue;
    const RigidPose e = est_ref_inv * r.pose;
    const RigidPose g = gt_ref_inv * gt.at(r.frame);
    const double re = rotation_error_deg(e, g);
    const double te = translation_error(e, g);
    rot_sq += re * re;
    trans_sq += te * te;
    out.rotation_max_deg = std::max(out.rotation_max_deg, re);
    out.translation_max_mm = std::max(out.translation_max_mm, te);
    ++out.frames;
  }
  out.rotation_rmse_deg = std::sqrt(rot_sq / out.frames);
  out.translation_rmse_mm = std::sqrt(trans_sq / out.frames);
  return out;
}

EvalReport run_eval(const EvalOptions& opts) {
  EvalReport report;
  std::optional<std::vector<TrajectoryRecord>> gt;
  if (opts.ground_truth) gt = read_trajectory(*opts.ground_truth);
  std::vector<double> totals, losses, runs;
  for (const auto& path : opts.trajectories) {
    const auto traj = read_trajectory(path);
    SequenceReport seq;
    seq.name = path.string();
    std::vector<TrackStatus> statuses;
    for (const auto& r : traj) statuses.push_back(r.status);
    seq.robustness = robustness_metrics(statuses);
    if (gt) seq.pose = pose_errors(traj, *gt);
    totals.push_back(seq.robustness.total_frames);
    losses.push_back(seq.robustness.num_losses);
    runs.push_back(seq.robustness.longest_run);
    report.sequences.push_back(std::move(seq));
  }
  report.total_frames = summarize(totals);
  report.losses = summarize(losses);
  report.longest_run = summarize(runs);

  if (opts.seg_pairs) {
    if (!fs::is_directory(*opts.seg_pairs)) throw PipelineError("seg-pairs directory not found: " + opts.seg_pairs->string());
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(*opts.seg_pairs)) {
      const std::string name = entry.path().filename().string();
      if (ends_with(name, "_pred.mha")) names.push_back(name.substr(0, name.size() - 9));
    }
    std::sort(names.begin(), names.end());
    for (const auto& n : names) {
      const fs::path truth = *opts.seg_pairs / (n + "_gt.mha");
      if (!fs::exists(truth)) throw PipelineError("missing ground truth for " + n + "_pred.mha");
      const SegmentationVolume pred(read_volume(*opts.seg_pairs / (n + "_pred.mha")));
      const SegmentationVolume ref(read_volume(truth));
      report.dice.push_back(dice_score(pred, ref));
    }
    report.dice_stats = summarize(report.dice);
  }
  return report;
}

std::string format_mean_std(double mean, double std, int decimals) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.*f(%.*f)", decimals, mean, decimals, std);
  return buf;
}

std::string format_report_text(const EvalReport& report) {
  std::ostringstream out;
  out << "Robustness over " << report.sequences.size() << " sequence(s)\n";
  constexpr std::size_t kLabel = 40, kCol = 16;
  out << pad("", kLabel) << pad("mean (std)", kCol) << pad("median", kCol / 2) << "range\n";
  auto row = [&](const char* label, const SeriesStats& s) {
    out << pad(label, kLabel) << pad(format_mean_std(s.mean, s.std, 2), kCol) << pad(format_number(s.median, 1), kCol / 2)
        << "[" << format_number(s.min, 2) << ", " << format_number(s.max, 2) << "]\n";
  };
  row("total frames", report.total_frames);
  row("no. of tracking losses", report.losses);
  row("longest sequence without tracking loss", report.longest_run);

  const bool any_pose = std::any_of(report.sequences.begin(), report.sequences.end(),
                                    [](const SequenceReport& s) { return s.pose.has_value(); });
  if (any_pose) {
    out << "\nPose error vs ground truth (tracked frames)\n";
    out << pad("sequence", kLabel) << pad("frames", 8) << pad("rot RMSE deg", 14) << pad("trans RMSE mm", 15)
        << pad("rot max deg", 13) << "trans max mm\n";
    char buf[64];
    for (const auto& s : report.sequences) {
      if (!s.pose) continue;
      out << pad(s.name, kLabel) << pad(std::to_string(s.pose->frames), 8);
      std::snprintf(buf, sizeof buf, "%.4f", s.pose->rotation_rmse_deg);
      out << pad(buf, 14);
      std::snprintf(buf, sizeof buf, "%.4f", s.pose->translation_rmse_mm);
      out << pad(buf, 15);
      std::snprintf(buf, sizeof buf, "%.4f", s.pose->rotation_max_deg);
      out << pad(buf, 13);
      std::snprintf(buf, sizeof buf, "%.4f", s.pose->translation_max_mm);
      out << buf << "\n";
    }
  }
  if (report.dice_stats) {
    out << "\nDice\n" << pad("images", 10) << "mean(std)\n";
    out << pad(std::to_string(report.dice_stats->count), 10)
        << format_mean_std(report.dice_stats->mean, report.dice_stats->std, 4) << "\n";
  }
  return out.str();
}

std::string format_report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["robustness"]["total_frames"] = stats_json(report.total_frames);
  j["robustness"]["tracking_losses"] = stats_json(report.losses);
  j["robustness"]["longest_run"] = stats_json(report.longest_run);
  auto seqs = nlohmann::ordered_json::array();
  for (const auto& s : report.sequences) {
    nlohmann::ordered_json q;
    q["name"] = s.name;
    q["total_frames"] = s.robustness.total_frames;
    q["tracking_losses"] = s.robustness.num_losses;
    q["longest_run"] = s.robustness.longest_run;
    if (s.pose) {
      q["pose"]["frames"] = s.pose->frames;
      q["pose"]["rotation_rmse_deg"] = s.pose->rotation_rmse_deg;
      q["pose"]["translation_rmse_mm"] = s.pose->translation_rmse_mm;
      q["pose"]["rotation_max_deg"] = s.pose->rotation_max_deg;
      q["pose"]["translation_max_mm"] = s.pose->translation_max_mm;
    }
    seqs.push_back(q);
  }
  j["sequences"] = seqs;
  if (report.dice_stats) {
    j["dice"]["values"] = report.dice;
    j["dice"]["stats"] = stats_json(*report.dice_stats);
  }
  return j.dump(2) + "\n";
}

}  // namespace echofusion
