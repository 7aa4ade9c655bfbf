// Synthetic scene, trajectory, and two-view prediction generator. Stands in
// for the neural two-view prior and provides exact ground truth for tests.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pmslam/camera.hpp"
#include "pmslam/lie.hpp"

namespace pmslam {

// Textured box room with a few interior spheres. The descriptor field is a
// smooth function of the 3D surface point (low-frequency random Fourier
// features), so feature matching is well-posed without a network.
struct SyntheticScene {
  Vec3 room_half_extents = Vec3(3.0, 2.0, 3.0);
  struct Sphere {
    Vec3 center;
    double radius;
  };
  std::vector<Sphere> spheres;
  Eigen::MatrixXd descriptor_freqs;   // dim x 3
  Eigen::VectorXd descriptor_phases;  // dim
  int descriptor_dim = 16;
  uint64_t seed = 0;
};

SyntheticScene make_scene(uint64_t seed, int descriptor_dim = 16);

/// Unit-normalized descriptor of a 3D surface point.
Eigen::VectorXd descriptor_at(const SyntheticScene& scene, const Vec3& x_world);

enum class TrajectoryKind { kOrbit, kLoop, kPureRotation, kZoomLike };

TrajectoryKind trajectory_kind_from_string(const std::string& name);

/// Deterministic smooth world-from-camera trajectory inside the room.
/// The loop kind returns exactly to its start.
std::vector<Sim3Pose> make_trajectory(TrajectoryKind kind, int n_frames,
                                      uint64_t seed);

/// Rendering intrinsics for a given resolution (~80 deg horizontal FOV).
PinholeIntrinsics render_intrinsics(int height, int width);

struct RenderResult {
  Pointmap local_points;  // camera-frame pointmap
  std::vector<Vec3> world_points;
  std::vector<double> distances;  // |local point|
};

/// Ray-casts the scene from a camera pose. Every pixel hits the closed room,
/// so all pixels are valid.
RenderResult render_view(const SyntheticScene& scene, const Sim3Pose& T_wc,
                         int height, int width);

struct NoiseModel {
  double depth_sigma = 0.0;        // relative, per pixel
  double outlier_fraction = 0.0;   // gross depth outliers
  double outlier_magnitude = 3.0;  // depth multiplier for outliers
  double scale_jitter_sigma = 0.0; // log-scale, one draw per pair
};

// Two-view prediction: both pointmaps in frame i's coordinates, confidences
// anticorrelated with injected error, descriptors from the scene field.
struct PredictionPair {
  Pointmap X_i_in_i;
  Pointmap X_j_in_i;
  ConfidenceMap C_i;
  ConfidenceMap C_j;
  FeatureMap F_i;
  FeatureMap F_j;
  double scale_jitter = 1.0;
};

/// Renders both views, expresses both in frame i, applies one global scale
/// jitter to the whole pair, then depth noise and outliers. Deterministic
/// given (scene.seed, salt).
PredictionPair predict_pair(const SyntheticScene& scene, const Sim3Pose& T_wi,
                            const Sim3Pose& T_wj, const NoiseModel& noise,
                            int height, int width, uint64_t salt = 0);

/// Exact pixel correspondences (pixel in i, pixel in j) by reprojection with
/// z-buffer occlusion handling.
MatchSet ground_truth_matches(const SyntheticScene& scene, const Sim3Pose& T_wi,
                              const Sim3Pose& T_wj, int height, int width);

}  // namespace pmslam
