#include "pmslam/lie.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

namespace pmslam {

namespace {
constexpr int kRenormInterval = 100;
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<     0, -v.z(),  v.y(),
       v.z(),      0, -v.x(),
      -v.y(),  v.x(),      0;
  // clang-format on
  return s;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 Omega = skew(omega);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + Omega + 0.5 * Omega * Omega;
  }
  const double theta_sq = theta * theta;
  return Mat3::Identity() + (std::sin(theta) / theta) * Omega +
         ((1.0 - std::cos(theta)) / theta_sq) * Omega * Omega;
}

Vec3 so3_log(const Mat3& rotation) {
  const double cos_angle =
      std::clamp(0.5 * (rotation.trace() - 1.0), -1.0, 1.0);
  const double angle = std::acos(cos_angle);
  const Vec3 axis_unscaled(rotation(2, 1) - rotation(1, 2),
                           rotation(0, 2) - rotation(2, 0),
                           rotation(1, 0) - rotation(0, 1));
  if (angle < kSmallAngle) {
    // log(R) ~ 0.5 * vee(R - R^T) to second order.
    return 0.5 * axis_unscaled;
  }
  if (angle > M_PI - 1e-6) {
    throw std::domain_error("so3_log: rotation angle at pi is degenerate");
  }
  return (0.5 * angle / std::sin(angle)) * axis_unscaled;
}

Mat3 sim3_w_matrix(const Vec3& omega, double sigma) {
  // W = int_0^1 exp(sigma u) exp(u [omega]x) du = C I + A [omega]x + B [omega]x^2
  const double theta = omega.norm();
  const double scale = std::exp(sigma);
  const Mat3 Omega = skew(omega);

  double A, B, C;
  if (std::abs(sigma) < kSmallAngle) {
    C = 1.0 + 0.5 * sigma + sigma * sigma / 6.0;
    if (theta < kSmallAngle) {
      A = 0.5 + sigma / 3.0;
      B = 1.0 / 6.0 + sigma / 8.0;
    } else {
      const double theta_sq = theta * theta;
      // Stable at sigma = 0; only the sigma/theta mixed terms need care.
      const double denom = sigma * sigma + theta_sq;
      A = (scale * (sigma * std::sin(theta) - theta * std::cos(theta)) + theta) /
          (theta * denom);
      B = (C - (scale * (sigma * std::cos(theta) + theta * std::sin(theta)) - sigma) /
                   denom) /
          theta_sq;
    }
  } else {
    C = (scale - 1.0) / sigma;
    if (theta < kSmallAngle) {
      const double sigma_sq = sigma * sigma;
      A = (scale * (sigma - 1.0) + 1.0) / sigma_sq;
      B = (scale * (sigma_sq - 2.0 * sigma + 2.0) - 2.0) / (2.0 * sigma_sq * sigma);
    } else {
      const double theta_sq = theta * theta;
      const double denom = sigma * sigma + theta_sq;
      A = (scale * (sigma * std::sin(theta) - theta * std::cos(theta)) + theta) /
          (theta * denom);
      B = (C - (scale * (sigma * std::cos(theta) + theta * std::sin(theta)) - sigma) /
                   denom) /
          theta_sq;
    }
  }
  return C * Mat3::Identity() + A * Omega + B * Omega * Omega;
}

Sim3Pose::Sim3Pose(const Mat3& rotation, const Vec3& translation, double scale)
    : rotation_(rotation), translation_(translation), scale_(scale) {
  if (!(scale_ > 0.0)) {
    throw std::invalid_argument("Sim3Pose: scale must be positive");
  }
}

Sim3Pose Sim3Pose::exp(const Tangent7& tau) {
  const Vec3 rho = tau.head<3>();
  const Vec3 omega = tau.segment<3>(3);
  const double sigma = tau(6);
  Sim3Pose result;
  result.rotation_ = so3_exp(omega);
  result.scale_ = std::exp(sigma);
  result.translation_ = sim3_w_matrix(omega, sigma) * rho;
  return result;
}

Tangent7 Sim3Pose::log() const {
  const Vec3 omega = so3_log(rotation_);
  const double sigma = std::log(scale_);
  const Mat3 W = sim3_w_matrix(omega, sigma);
  Tangent7 tau;
  tau.head<3>() = W.partialPivLu().solve(translation_);
  tau.segment<3>(3) = omega;
  tau(6) = sigma;
  return tau;
}

Sim3Pose Sim3Pose::inverse() const {
  Sim3Pose result;
  result.rotation_ = rotation_.transpose();
  result.scale_ = 1.0 / scale_;
  result.translation_ = -result.scale_ * (result.rotation_ * translation_);
  result.ops_since_renorm_ = ops_since_renorm_ + 1;
  result.renormalize_if_needed();
  return result;
}

Sim3Pose Sim3Pose::operator*(const Sim3Pose& other) const {
  Sim3Pose result;
  result.rotation_ = rotation_ * other.rotation_;
  result.scale_ = scale_ * other.scale_;
  result.translation_ = scale_ * (rotation_ * other.translation_) + translation_;
  result.ops_since_renorm_ =
      std::max(ops_since_renorm_, other.ops_since_renorm_) + 1;
  result.renormalize_if_needed();
  return result;
}

void Sim3Pose::renormalize_if_needed() {
  if (ops_since_renorm_ < kRenormInterval) return;
  Eigen::JacobiSVD<Mat3> svd(rotation_, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 R = svd.matrixU() * svd.matrixV().transpose();
  if (R.determinant() < 0.0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1.0;
    R = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  rotation_ = R;
  ops_since_renorm_ = 0;
}

Mat7 Sim3Pose::adjoint() const {
  Mat7 ad = Mat7::Zero();
  ad.block<3, 3>(0, 0) = scale_ * rotation_;
  ad.block<3, 3>(0, 3) = skew(translation_) * rotation_;
  ad.block<3, 1>(0, 6) = -translation_;
  ad.block<3, 3>(3, 3) = rotation_;
  ad(6, 6) = 1.0;
  return ad;
}

bool Sim3Pose::isApprox(const Sim3Pose& other, double tol) const {
  return (rotation_ - other.rotation_).norm() <= tol &&
         (translation_ - other.translation_).norm() <= tol &&
         std::abs(scale_ - other.scale_) <= tol;
}

Sim3Pose relative_pose(const Sim3Pose& T_wi, const Sim3Pose& T_wj) {
  return T_wi.inverse() * T_wj;
}

}  // namespace pmslam
