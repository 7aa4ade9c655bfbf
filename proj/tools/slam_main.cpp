// Command-line front end: `slam run` executes the pipeline on a synthetic
// sequence or a recorded pointmap stream, `slam synth` records a stream, and
// `slam eval` compares two TUM trajectories.

#include <cstdio>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pmslam/pipeline.hpp"

namespace {

using namespace pmslam;

struct RunOptions {
  std::string input;
  std::string out_dir;
  std::string config_path;
  std::string calib = "none";
  std::string record_dir;
  int frames = 60;
  std::optional<uint64_t> seed;
  bool no_loop_closure = false;
};

std::unique_ptr<PredictorInterface> make_predictor(const RunOptions& opts,
                                                   SlamConfig& config) {
  constexpr const char* kSyntheticPrefix = "synthetic:";
  if (opts.input.rfind(kSyntheticPrefix, 0) == 0) {
    const std::string kind_name = opts.input.substr(std::string(kSyntheticPrefix).size());
    const TrajectoryKind kind = trajectory_kind_from_string(kind_name);
    SyntheticScene scene = make_scene(config.seed);
    std::vector<Sim3Pose> poses = make_trajectory(kind, opts.frames, config.seed);
    if (opts.calib == "auto") {
      config.calibrated = true;
      config.intrinsics = render_intrinsics(config.height, config.width);
    }
    return std::make_unique<SyntheticPredictor>(std::move(scene), std::move(poses),
                                                config.noise, config.height,
                                                config.width);
  }
  return std::make_unique<StreamPredictor>(opts.input);
}

void apply_calib(const RunOptions& opts, SlamConfig& config) {
  if (opts.calib == "none" || opts.calib == "auto") return;
  double fx, fy, cx, cy;
  if (std::sscanf(opts.calib.c_str(), "%lf,%lf,%lf,%lf", &fx, &fy, &cx, &cy) != 4) {
    throw CLI::ValidationError("--calib", "expected fx,fy,cx,cy or none or auto");
  }
  config.calibrated = true;
  config.intrinsics = {fx, fy, cx, cy};
}

int run_command(const RunOptions& opts, bool write_outputs) {
  SlamConfig config;
  if (!opts.config_path.empty()) config = load_config(opts.config_path);
  if (opts.seed) config.seed = *opts.seed;
  if (opts.no_loop_closure) config.loop_closure = false;
  apply_calib(opts, config);

  auto predictor = make_predictor(opts, config);
  if (config.calibrated) config.track_mode = TrackMode::kPixel;

  std::unique_ptr<RecordingPredictor> recorder;
  PredictorInterface* source = predictor.get();
  if (!opts.record_dir.empty()) {
    recorder = std::make_unique<RecordingPredictor>(*predictor, opts.record_dir);
    source = recorder.get();
  }

  SlamPipeline pipeline(config, *source);
  pipeline.run();
  if (write_outputs) pipeline.write_outputs(opts.out_dir);

  const auto& stats = pipeline.stats();
  std::printf("frames %d keyframes %d edges %zu loop_edges %d lost %d reloc %d\n",
              stats.frames, stats.keyframes, pipeline.graph().edges.size(),
              stats.loop_edges, stats.lost_frames, stats.relocalisations);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pointmap SLAM pipeline"};
  app.require_subcommand(1);

  RunOptions run_opts;
  auto* run = app.add_subcommand("run", "Run the SLAM pipeline");
  run->add_option("--input", run_opts.input,
                  "Pointmap stream directory or synthetic:KIND "
                  "(orbit|loop|pure_rotation|zoom_like)")
      ->required();
  run->add_option("--out", run_opts.out_dir, "Output directory")->required();
  run->add_option("--config", run_opts.config_path, "Config file (key = value)");
  run->add_option("--frames", run_opts.frames, "Frame count (synthetic input)");
  run->add_option("--seed", run_opts.seed, "Random seed override");
  run->add_option("--calib", run_opts.calib,
                  "fx,fy,cx,cy, or auto (synthetic intrinsics), or none");
  run->add_option("--record", run_opts.record_dir,
                  "Also record the predictor stream to this directory");
  run->add_flag("--no-loop-closure", run_opts.no_loop_closure,
                "Disable loop-closure detection");

  RunOptions synth_opts;
  std::string synth_kind = "loop";
  auto* synth = app.add_subcommand(
      "synth", "Record a synthetic pointmap stream for later replay");
  synth->add_option("--kind", synth_kind,
                    "Trajectory kind (orbit|loop|pure_rotation|zoom_like)");
  synth->add_option("--frames", synth_opts.frames, "Frame count");
  synth->add_option("--seed", synth_opts.seed, "Random seed");
  synth->add_option("--config", synth_opts.config_path, "Config file");
  synth->add_option("--out", synth_opts.record_dir, "Stream output directory")
      ->required();

  std::string est_path, ref_path;
  auto* eval = app.add_subcommand("eval", "Evaluate a trajectory (ATE RMSE)");
  eval->add_option("--est", est_path, "Estimated trajectory (TUM)")->required();
  eval->add_option("--ref", ref_path, "Reference trajectory (TUM)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      return run_command(run_opts, true);
    }
    if (synth->parsed()) {
      // Drive the pipeline over the synthetic sequence with recording enabled
      // so the stream contains exactly the pairs a replayed run will request.
      synth_opts.input = "synthetic:" + synth_kind;
      return run_command(synth_opts, false);
    }
    if (eval->parsed()) {
      const Trajectory est = read_tum_trajectory(est_path);
      const Trajectory ref = read_tum_trajectory(ref_path);
      std::printf("ate_rmse %.9f\n", ate_rmse(est, ref));
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
