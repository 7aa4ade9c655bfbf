// Trajectory and dense-geometry evaluation: Sim(3) trajectory alignment,
// ATE RMSE, and thresholded accuracy/completion/Chamfer.

#pragma once

#include <string>
#include <vector>

#include "pmslam/lie.hpp"

namespace pmslam {

struct TimedPose {
  double timestamp = 0.0;  // seconds
  Sim3Pose pose;
};

struct Trajectory {
  std::vector<TimedPose> poses;
};

struct PointCloudMetrics {
  double accuracy = 0.0;    // meters
  double completion = 0.0;  // meters
  double chamfer = 0.0;     // meters
};

struct AlignParams {
  double association_window = 0.02;  // seconds
};

/// Closed-form least-squares similarity (Umeyama) minimizing
/// sum |ref_i - s R est_i - t|^2 over timestamp-associated positions.
/// Throws std::runtime_error on <3 associations or collinear geometry.
Sim3Pose align_sim3(const Trajectory& est, const Trajectory& ref,
                    const AlignParams& params = {});

/// RMSE of position residuals after align_sim3.
double ate_rmse(const Trajectory& est, const Trajectory& ref,
                const AlignParams& params = {});

/// Accuracy = RMSE over est points of nearest-ref distance clamped at
/// max_dist; completion symmetric; chamfer the mean of the two.
PointCloudMetrics cloud_metrics(const std::vector<Vec3>& est_cloud,
                                const std::vector<Vec3>& ref_cloud,
                                double max_dist = 0.5);

// TUM trajectory text: "timestamp tx ty tz qx qy qz qw", '#' comments.
Trajectory read_tum_trajectory(const std::string& path);
void write_tum_trajectory(const Trajectory& trajectory, const std::string& path);

// PLY point clouds (x, y, z float32, optional u8 RGB), ASCII or binary LE.
std::vector<Vec3> read_ply(const std::string& path);
void write_ply(const std::vector<Vec3>& points, const std::string& path,
               bool binary = true);

}  // namespace pmslam
