// End-to-end incremental SLAM loop: predictor interface, initialization,
// tracking, keyframing, loop closure, relocalisation, backend scheduling,
// and all pipeline I/O.

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pmslam/backend.hpp"
#include "pmslam/eval.hpp"
#include "pmslam/retrieval.hpp"
#include "pmslam/synth.hpp"
#include "pmslam/tracking.hpp"

namespace pmslam {

// Two-view prior abstraction: a synthetic simulator or a recorded stream.
class PredictorInterface {
 public:
  virtual ~PredictorInterface() = default;
  virtual PredictionPair predict(int frame_a, int frame_b) = 0;
  virtual DescriptorSet encode(int frame) = 0;
  virtual int frame_count() const = 0;
  virtual double timestamp(int frame) const = 0;
};

struct SlamConfig {
  double omega_k = 0.333;  // keyframe threshold
  double omega_r = 0.005;  // retrieval score threshold
  double omega_l = 0.1;    // loop-closure match-fraction threshold
  double reloc_match_fraction = 0.3;  // strict: fraction must exceed this
  double reloc_score_factor = 4.0;    // stricter retrieval score = factor * omega_r

  bool calibrated = false;
  PinholeIntrinsics intrinsics;
  TrackMode track_mode = TrackMode::kRay;  // pixel mode when calibrated

  RobustWeightParams weights;
  MatchParams matching;
  RefineParams refinement;
  SolvePoseParams solve_pose_params() const;

  int retrieval_top_k = 3;
  int codebook_size = 256;
  RetrievalParams retrieval;

  bool loop_closure = true;
  double map_confidence_percentile = 0.10;

  uint64_t seed = 0;
  int height = 48;
  int width = 64;
  NoiseModel noise;  // synthetic input only
};

/// Flat "key = value" config text; unknown keys are an error.
SlamConfig load_config(const std::string& path);
void apply_config_entry(SlamConfig& config, const std::string& key,
                        const std::string& value);

struct FrameRecord {
  double timestamp = 0.0;
  int frame_id = -1;
  int keyframe_id = -1;
  Sim3Pose T_kf;  // keyframe-from-frame
  bool lost = false;
};

struct PipelineStats {
  double predict_ms = 0.0;
  double track_ms = 0.0;
  double fuse_ms = 0.0;
  double retrieval_ms = 0.0;
  double backend_ms = 0.0;
  double total_ms = 0.0;
  int frames = 0;
  int keyframes = 0;
  int loop_edges = 0;
  int relocalisations = 0;
  int lost_frames = 0;
  int backend_iterations = 0;
};

class SlamPipeline {
 public:
  SlamPipeline(SlamConfig config, PredictorInterface& predictor);

  /// Self-pair prediction seeds the first canonical pointmap and the gauge
  /// anchor at identity.
  void initialize(int frame);
  void process_frame(int frame);
  void run();  // all frames of the predictor

  const Graph& graph() const { return graph_; }
  const PipelineStats& stats() const { return stats_; }
  const std::vector<FrameRecord>& frame_records() const { return frames_; }
  bool lost() const { return lost_; }
  bool initialized() const { return !graph_.keyframes.empty(); }

  /// All frame poses composed through the (optimized) keyframe poses.
  Trajectory trajectory() const;
  /// Union of canonical pointmaps in world coordinates, low-confidence
  /// pixels excluded.
  std::vector<Vec3> export_map() const;
  /// trajectory.txt (TUM), map.ply, report.json.
  void write_outputs(const std::string& out_dir) const;

 private:
  void relocalize(int frame);
  void promote_keyframe(int frame, const FramePrediction& prediction,
                        const Sim3Pose& T_WF, const MatchSet* edge_matches,
                        int edge_to_kf);
  void run_backend();
  BackendParams backend_params() const;
  Keyframe make_keyframe(int frame, const FramePrediction& prediction,
                         const Sim3Pose& T_WF);

  SlamConfig config_;
  PredictorInterface& predictor_;
  Graph graph_;
  std::unique_ptr<RetrievalIndex> retrieval_;
  int next_keyframe_id_ = 0;
  int current_kf_id_ = -1;
  Sim3Pose last_T_kf_;
  MatchSet last_matches_;
  bool have_seed_ = false;
  bool lost_ = false;
  std::vector<FrameRecord> frames_;
  PipelineStats stats_;
};

// --- Predictors -----------------------------------------------------------

class SyntheticPredictor : public PredictorInterface {
 public:
  SyntheticPredictor(SyntheticScene scene, std::vector<Sim3Pose> poses,
                     NoiseModel noise, int height, int width,
                     double frame_interval = 0.1);

  PredictionPair predict(int frame_a, int frame_b) override;
  DescriptorSet encode(int frame) override;
  int frame_count() const override { return static_cast<int>(poses_.size()); }
  double timestamp(int frame) const override { return frame * frame_interval_; }

  const std::vector<Sim3Pose>& ground_truth_poses() const { return poses_; }
  const SyntheticScene& scene() const { return scene_; }

 private:
  SyntheticScene scene_;
  std::vector<Sim3Pose> poses_;
  NoiseModel noise_;
  int height_;
  int width_;
  double frame_interval_;
};

// Records every predictor response into a pointmap-stream directory so a run
// can be replayed bit-for-stream from disk.
class RecordingPredictor : public PredictorInterface {
 public:
  RecordingPredictor(PredictorInterface& inner, std::string directory);

  PredictionPair predict(int frame_a, int frame_b) override;
  DescriptorSet encode(int frame) override;
  int frame_count() const override { return inner_.frame_count(); }
  double timestamp(int frame) const override { return inner_.timestamp(frame); }

 private:
  PredictorInterface& inner_;
  std::string directory_;
  bool meta_written_ = false;
};

// Replays a pointmap-stream directory (meta file plus per-pair "PMPAIR01"
// records and per-frame encode records).
class StreamPredictor : public PredictorInterface {
 public:
  explicit StreamPredictor(std::string directory);

  PredictionPair predict(int frame_a, int frame_b) override;
  DescriptorSet encode(int frame) override;
  int frame_count() const override { return frame_count_; }
  double timestamp(int frame) const override;

 private:
  std::string directory_;
  int height_ = 0;
  int width_ = 0;
  int dim_ = 0;
  int frame_count_ = 0;
  std::vector<double> timestamps_;
};

std::string pair_record_name(int frame_a, int frame_b);
std::string encode_record_name(int frame);

}  // namespace pmslam
