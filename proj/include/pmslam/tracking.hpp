// Frame-to-keyframe Sim(3) pose estimation by robust IRLS Gauss-Newton on
// ray+distance (uncalibrated) or pixel+depth (calibrated) residuals, and
// canonical pointmap fusion.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pmslam/camera.hpp"
#include "pmslam/lie.hpp"

namespace pmslam {

struct Keyframe {
  int id = -1;
  int frame_id = -1;  // source image handle
  Pointmap canonical;
  ConfidenceMap canonical_confidence;
  FeatureMap features;
  Sim3Pose T_WC;
  Eigen::MatrixXd retrieval_signature;  // opaque, owned by the retrieval module
};

struct RobustWeightParams {
  double sigma2_point = 1e-2;  // scene units^2
  double sigma2_ray = 1e-3;
  double sigma2_pixel = 4.0;  // px^2
  double q_min = 0.0;
  double q_min_fraction = 0.1;  // q_min = fraction * median match confidence
  double huber_delta = 1.345;   // whitened units
  double distance_weight = 0.01;  // distance/depth block relative to ray/pixel
};

/// Eq-5 style confidence weighting: sigma^2 / q for q > q_min, else infinity
/// (the match carries no information).
double robust_weight(double q, double sigma2, double q_min);

enum class TrackMode { kRay, kPoint, kPixel };

TrackMode track_mode_from_string(const std::string& name);

// One weighted residual block per match. Rows: ray/point/pixel residual
// followed by the distance (or depth) residual; unused rows carry zero weight.
struct ResidualBlock {
  Eigen::Matrix<double, 4, 1> residual = Eigen::Matrix<double, 4, 1>::Zero();
  Eigen::Matrix<double, 4, 7> jacobian = Eigen::Matrix<double, 4, 7>::Zero();
  Eigen::Matrix<double, 4, 1> weight = Eigen::Matrix<double, 4, 1>::Zero();
  double info = 0.0;  // confidence information q / sigma^2, before Huber
  bool used = false;
};

/// Residuals and analytical Jacobians w.r.t. a left perturbation of T_ref_src.
/// X_ref is indexed by pixel_b of each match, X_src by pixel_a.
std::vector<ResidualBlock> residual_blocks(
    const Sim3Pose& T_ref_src, const MatchSet& matches, const Pointmap& X_ref,
    const Pointmap& X_src, TrackMode mode, const RobustWeightParams& params,
    const PinholeIntrinsics* K = nullptr);

/// Ray-mode wrapper: 3-vector ray residual plus scalar distance residual.
/// Robust (Huber + confidence) cost of a set of residual blocks.
double block_cost(const std::vector<ResidualBlock>& blocks,
                  const RobustWeightParams& params, TrackMode mode);

inline std::vector<ResidualBlock> ray_distance_residuals(
    const Sim3Pose& T_kf, const MatchSet& matches, const Pointmap& X_canonical,
    const Pointmap& X_frame, const RobustWeightParams& params) {
  return residual_blocks(T_kf, matches, X_canonical, X_frame, TrackMode::kRay,
                         params);
}

struct FramePrediction {
  Pointmap X_f_f;     // current frame's pointmap, frame coordinates
  Pointmap X_k_f;     // keyframe image's pointmap, frame coordinates
  ConfidenceMap C_f;
  ConfidenceMap C_k;
  FeatureMap F_f;
  FeatureMap F_k;
};

struct SolvePoseParams {
  RobustWeightParams weights;
  MatchParams matching;
  RefineParams refinement;
  bool refine_features = true;
  int max_iterations = 20;
  double update_tol = 1e-6;
  int min_valid_matches = 12;
  std::optional<PinholeIntrinsics> intrinsics;
};

struct TrackResult {
  Sim3Pose T_kf;
  MatchSet matches;
  std::vector<double> cost_trace;
  int iterations = 0;
  bool lost = false;
};

/// IRLS Gauss-Newton with left-plus updates (cap 20 iterations, update norm
/// tolerance 1e-6). Matches the frame's own pointmap against the keyframe
/// canonical, seeded from match_seed when provided. A valid-match count below
/// the floor reports tracking lost.
TrackResult solve_pose(const Keyframe& keyframe, const FramePrediction& prediction,
                       const Sim3Pose& init, TrackMode mode,
                       const SolvePoseParams& params,
                       const MatchSet* match_seed = nullptr);

/// Running weighted-average fusion of a registered observation into the
/// keyframe canonical; confidence accumulates monotonically.
void fuse_canonical(Keyframe& keyframe, const Pointmap& X_k_f,
                    const ConfidenceMap& confidence, const Sim3Pose& T_kf);

/// True (new keyframe needed) iff the valid-match fraction or the fraction of
/// distinct projected-into pixels falls below omega_k.
bool keyframe_decision(const MatchSet& matches, int height, int width,
                       double omega_k);

}  // namespace pmslam
