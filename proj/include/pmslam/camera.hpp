// Generic central-camera geometry: pointmap grids, ray normalization,
// per-pixel iterative projective matching with feature refinement, and the
// calibrated pinhole projection/backprojection path.

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <vector>

#include "pmslam/lie.hpp"

namespace pmslam {

// H x W grid of 3D points. Row-major storage, index = v * width + u.
struct Pointmap {
  int height = 0;
  int width = 0;
  std::vector<Vec3> points;
  std::vector<uint8_t> valid;

  Pointmap() = default;
  Pointmap(int h, int w)
      : height(h), width(w), points(h * w, Vec3::Zero()), valid(h * w, 1) {}

  int size() const { return height * width; }
  int index(int u, int v) const { return v * width + u; }
  const Vec3& at(int u, int v) const { return points[index(u, v)]; }
  Vec3& at(int u, int v) { return points[index(u, v)]; }
};

struct ConfidenceMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  ConfidenceMap() = default;
  ConfidenceMap(int h, int w, double value = 0.0)
      : height(h), width(w), values(h * w, value) {}
};

// Unit rays and distances; ray * distance reconstructs the source point.
struct RayMap {
  int height = 0;
  int width = 0;
  std::vector<Vec3> rays;
  std::vector<double> distances;
  std::vector<uint8_t> valid;

  int index(int u, int v) const { return v * width + u; }
};

// Per-pixel d-dim descriptors (column per pixel) with matching confidences Q.
struct FeatureMap {
  int height = 0;
  int width = 0;
  int dim = 0;
  Eigen::MatrixXd descriptors;  // dim x (height * width)
  std::vector<double> match_confidence;

  FeatureMap() = default;
  FeatureMap(int h, int w, int d)
      : height(h),
        width(w),
        dim(d),
        descriptors(Eigen::MatrixXd::Zero(d, h * w)),
        match_confidence(h * w, 1.0) {}

  int index(int u, int v) const { return v * width + u; }
};

struct Match {
  int pixel_a = -1;  // pixel index in frame a
  int pixel_b = -1;  // pixel index in frame b
  double confidence = 0.0;
  bool valid = false;
};

struct MatchSet {
  std::vector<Match> matches;

  int valid_count() const;
  double valid_fraction() const;
  /// Fraction of distinct frame-a pixels hit by valid matches.
  double unique_pixel_fraction(int num_pixels_a) const;

  static MatchSet identity(int num_pixels, double confidence = 1.0);
};

struct PinholeIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
};

/// Per-pixel ray = point / |point|, distance = |point|. Pixels with norm
/// below 1e-12 are flagged invalid.
RayMap normalize_rays(const Pointmap& pm);

struct IterProjParams {
  double lambda_init = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 0.3;
  double angle_tol = 1e-5;  // rad
  int max_iterations = 10;
};

struct ProjectResult {
  Vec2 pixel = Vec2::Zero();
  bool converged = false;
  int iterations = 0;
};

/// Bilinearly interpolated unit ray at continuous pixel p, with its 3x2
/// derivative w.r.t. (u, v). Returns nullopt if any support pixel is invalid.
std::optional<Vec3> interpolate_ray(const RayMap& rays, const Vec2& p,
                                    Eigen::Matrix<double, 3, 2>* jacobian = nullptr);

/// Levenberg-Marquardt search for the pixel whose interpolated ray best
/// aligns with the direction of x. Iterates are clamped to image bounds.
ProjectResult iterative_project(const RayMap& rays, const Vec3& x, const Vec2& p0,
                                const IterProjParams& params = {});

struct MatchParams {
  IterProjParams projection;
  // Match invalid if 3D endpoint distance exceeds this fraction of the
  // median scene distance of the reference pointmap.
  double invalidation_median_fraction = 0.1;
};

/// Projects every point of X_b_in_a into X_a's ray map, seeded from init
/// (identity mapping when absent). One candidate match per pixel of b.
MatchSet match_pointmaps(const Pointmap& X_a, const Pointmap& X_b_in_a,
                         const FeatureMap& F_a, const FeatureMap& F_b,
                         const MatchSet* init = nullptr,
                         const MatchParams& params = {});

struct RefineParams {
  // Coarse-to-fine schedule: per-level (stride, radius in strides).
  std::vector<std::pair<int, int>> levels = {{2, 2}, {1, 2}};
};

/// Moves each match's frame-a pixel to the local argmax of descriptor inner
/// product, coarse-to-fine. Ties break toward the unrefined pixel.
MatchSet feature_refine(const MatchSet& matches, const FeatureMap& F_a,
                        const FeatureMap& F_b, const RefineParams& params = {});

/// Point at pixel (u, v) = depth * K^-1 (u, v, 1). Non-positive depth marks
/// the pixel invalid.
Pointmap backproject_depth(const std::vector<double>& depth, int height, int width,
                           const PinholeIntrinsics& K);

struct PinholeProjection {
  Vec2 pixel;
  Eigen::Matrix<double, 2, 3> jacobian;
};

/// Projects x into pixel space. Throws std::domain_error if z <= 0.
PinholeProjection pinhole_project(const Vec3& x, const PinholeIntrinsics& K);

}  // namespace pmslam
