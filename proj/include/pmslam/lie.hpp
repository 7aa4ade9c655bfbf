// Sim(3) group and tangent-space machinery.
//
// Tangent vectors are ordered (translation, rotation, scale), matching the
// point-Jacobian block layout [I, -[x]x, x] used throughout the solvers.
// All pose updates are left-plus: T <- Exp(tau) * T.

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace pmslam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Tangent7 = Eigen::Matrix<double, 7, 1>;
using Mat7 = Eigen::Matrix<double, 7, 7>;

// Threshold below which Exp/Log switch to Taylor series.
inline constexpr double kSmallAngle = 1e-8;

/// 3x3 skew-symmetric matrix such that skew(v) * u = v x u.
Mat3 skew(const Vec3& v);

/// SO(3) exponential via Rodrigues with small-angle series.
Mat3 so3_exp(const Vec3& omega);

/// SO(3) logarithm. Throws std::domain_error for rotation angle at pi.
Vec3 so3_log(const Mat3& rotation);

/// Coupled scale-rotation integral W(omega, sigma) with Exp translation t = W * rho.
Mat3 sim3_w_matrix(const Vec3& omega, double sigma);

// 7-DoF similarity transform T = [[s R, t], [0, 1]].
class Sim3Pose {
 public:
  Sim3Pose() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()), scale_(1.0) {}
  Sim3Pose(const Mat3& rotation, const Vec3& translation, double scale);

  static Sim3Pose exp(const Tangent7& tau);
  Tangent7 log() const;

  Sim3Pose inverse() const;
  Sim3Pose operator*(const Sim3Pose& other) const;

  /// Group action on a point: s R x + t.
  Vec3 operator*(const Vec3& x) const { return scale_ * (rotation_ * x) + translation_; }

  /// 7x7 adjoint, satisfying Exp(Ad * tau) = T * Exp(tau) * T^-1.
  Mat7 adjoint() const;

  /// Left-plus update Exp(tau) * T.
  Sim3Pose retract(const Tangent7& tau) const { return exp(tau) * *this; }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  double scale() const { return scale_; }

  bool isApprox(const Sim3Pose& other, double tol = 1e-9) const;

 private:
  Mat3 rotation_;
  Vec3 translation_;
  double scale_;
  // Compositions since the last re-orthonormalization; bounds rotation drift.
  int ops_since_renorm_ = 0;

  void renormalize_if_needed();
};

/// T_ij = T_wi^-1 * T_wj.
Sim3Pose relative_pose(const Sim3Pose& T_wi, const Sim3Pose& T_wj);

}  // namespace pmslam
