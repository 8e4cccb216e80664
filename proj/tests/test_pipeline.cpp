#include "echofusion/pipeline.hpp"
#include "echofusion/rng.hpp"

#include <doctest.h>

#include <json.hpp>

#include <fstream>
#include <iterator>
#include <random>

using namespace echofusion;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("echofusion_pipe_" + std::to_string(Rng(std::random_device{}()).next_u64()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& name) const { return path / name; }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

PipelineConfig small_config(int frames) {
  PipelineConfig cfg = parse_config(R"(
[scene]
volume_dims = 64
volume_spacing_mm = 3
[camera]
image_size = 120
[tsdf]
dims = 64
voxel_size_mm = 3
[compound]
max_dim = 64
)");
  cfg.trajectory.frames = frames;
  cfg.trajectory.translation_step_mm = 3.0;
  return cfg;
}

TrajectoryRecord record(int frame, TrackStatus status, const RigidPose& pose) {
  TrajectoryRecord r;
  r.frame = frame;
  r.status = status;
  r.pose = pose;
  r.inlier_ratio = 1.0;
  return r;
}

}  // namespace

TEST_CASE("summarize uses the sample standard deviation") {
  const SeriesStats s = summarize({2, 4, 4, 4, 5, 5, 7, 9});
  CHECK(s.count == 8);
  CHECK(s.mean == doctest::Approx(5.0));
  CHECK(s.std == doctest::Approx(std::sqrt(32.0 / 7.0)));
  CHECK(s.median == doctest::Approx(4.5));
  CHECK(s.min == 2.0);
  CHECK(s.max == 9.0);
  CHECK(summarize({3.0}).std == 0.0);
  CHECK(summarize({}).count == 0);
  CHECK(format_mean_std(98.114, 54.652, 2) == "98.11(54.65)");
}

TEST_CASE("pose_errors") {
  std::vector<TrajectoryRecord> truth, est;
  const RigidPose offset = RigidPose::from_axis_angle(Vec3(0, 1, 0), 0.4, Vec3(5, -2, 7));
  for (int k = 0; k < 5; ++k) {
    const RigidPose p = RigidPose::from_axis_angle(Vec3(0, 0, 1), 0.05 * k, Vec3(k, 0, 0));
    truth.push_back(record(k, TrackStatus::Tracked, p));
    // Estimates live in their own frame; only relative motion is compared.
    est.push_back(record(k, TrackStatus::Tracked, offset * p));
  }
  const PoseErrors e = pose_errors(est, truth);
  CHECK(e.frames == 5);
  CHECK(e.rotation_rmse_deg < 1e-6);
  CHECK(e.translation_rmse_mm < 1e-9);

  est[3].pose = est[3].pose * RigidPose::translation_only(Vec3(0, 2, 0));
  est[4].status = TrackStatus::Lost;
  const PoseErrors f = pose_errors(est, truth);
  CHECK(f.frames == 4);
  CHECK(f.translation_max_mm == doctest::Approx(2.0));
  CHECK(f.translation_rmse_mm == doctest::Approx(1.0));
}

TEST_CASE("eval report") {
  TempDir dir;
  using S = TrackStatus;
  const std::vector<S> a{S::Tracked, S::Tracked, S::Lost, S::Tracked, S::Tracked, S::Tracked, S::Lost};
  std::vector<TrajectoryRecord> ta, tb;
  for (int k = 0; k < 7; ++k) ta.push_back(record(k, a[k], RigidPose::identity()));
  for (int k = 0; k < 4; ++k) tb.push_back(record(k, S::Tracked, RigidPose::identity()));
  write_trajectory(ta, dir / "a.jsonl");
  write_trajectory(tb, dir / "b.jsonl");
  write_trajectory(ta, dir / "gt.jsonl");

  EvalOptions opts;
  opts.trajectories = {dir / "a.jsonl", dir / "b.jsonl"};
  opts.ground_truth = dir / "gt.jsonl";
  const EvalReport r = run_eval(opts);
  REQUIRE(r.sequences.size() == 2);
  CHECK(r.sequences[0].robustness.num_losses == 2);
  CHECK(r.sequences[0].robustness.longest_run == 3);
  CHECK(r.sequences[1].robustness.longest_run == 4);
  CHECK(r.sequences[0].pose->rotation_rmse_deg == 0.0);
  CHECK(r.losses.mean == doctest::Approx(1.0));
  CHECK(r.losses.std == doctest::Approx(std::sqrt(2.0)));

  const std::string text = format_report_text(r);
  CHECK(text.find("no. of tracking losses") != std::string::npos);
  CHECK(text.find("longest sequence without tracking loss") != std::string::npos);
  CHECK(text.find("1.00(1.41)") != std::string::npos);
  CHECK(text.find("[0, 2]") != std::string::npos);

  const auto j = nlohmann::json::parse(format_report_json(r));
  CHECK(j["robustness"]["tracking_losses"]["max"] == 2.0);
  CHECK(j["sequences"].size() == 2);
  CHECK(j["sequences"][0]["longest_run"] == 3);

  opts.seg_pairs = dir / "absent";
  CHECK_THROWS_AS(run_eval(opts), PipelineError);
}

TEST_CASE("simulation output") {
  TempDir dir;
  PipelineConfig cfg = small_config(4);
  cfg.dropout_frames = {2};
  const SimSummary s = run_sim(cfg, dir / "frames");
  CHECK(s.frames == 4);
  CHECK(s.dropouts == 1);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "frames")) files += e.is_regular_file();
  CHECK(files == 4 + 4 + 1);
  CHECK(read_trajectory(dir / "frames" / "gt.jsonl").size() == 4);

  const auto frames = list_frames(dir / "frames");
  REQUIRE(frames.size() == 4);
  CHECK(frames[0].intensity.filename() == "frame_0000_intensity.mha");
  CHECK(frames[3].segmentation.filename() == "frame_0003_seg.mha");

  SUBCASE("simulation is deterministic") {
    run_sim(cfg, dir / "again");
    for (const auto& f : frames)
      CHECK(slurp(f.intensity) == slurp(dir / "again" / f.intensity.filename()));
  }
  SUBCASE("tracking turns the dropout into one loss") {
    const TrackSummary t = run_track(cfg, dir / "frames", dir / "track");
    REQUIRE(t.trajectory.size() == 4);
    CHECK(t.trajectory[2].status == TrackStatus::Lost);
    CHECK(t.robustness.num_losses == 1);
    CHECK(t.trajectory[3].status == TrackStatus::Tracked);
    for (const char* name : {"trajectory.jsonl", "model_tsdf.mha", "model_weight.mha", "mesh.ply"})
      CHECK(fs::exists(dir / "track" / name));
    CHECK(t.mesh_triangles > 0);

    const FuseSummary fu = run_fuse(cfg, dir / "frames", dir / "track" / "trajectory.jsonl", dir / "fused.mha");
    CHECK(fu.frames_used == 3);
    for (const char* name : {"fused.mha", "fused_xy.pgm", "fused_yz.pgm", "fused_xz.pgm"})
      CHECK(fs::exists(dir / name));
  }
}

TEST_CASE("pipeline errors") {
  TempDir dir;
  CHECK_THROWS_WITH_AS(load_config(dir / "missing.ini"), doctest::Contains("config not found"), ConfigError);
  CHECK_THROWS_AS(list_frames(dir / "nowhere"), PipelineError);
  CHECK_THROWS_AS(run_track(small_config(1), dir.path, dir / "out"), PipelineError);
  CHECK(frame_stem(7) == "frame_0007");
}
