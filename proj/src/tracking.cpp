#include "pmslam/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace pmslam {

double robust_weight(double q, double sigma2, double q_min) {
  if (q > q_min) return sigma2 / q;
  return std::numeric_limits<double>::infinity();
}

TrackMode track_mode_from_string(const std::string& name) {
  if (name == "ray") return TrackMode::kRay;
  if (name == "point") return TrackMode::kPoint;
  if (name == "pixel") return TrackMode::kPixel;
  throw std::invalid_argument("unknown track mode: " + name);
}

namespace {

double huber_cost(double e, double delta) {
  return e <= delta ? 0.5 * e * e : delta * (e - 0.5 * delta);
}

double huber_factor(double e, double delta) {
  return e <= delta ? 1.0 : delta / e;
}

double median_confidence(const MatchSet& matches) {
  std::vector<double> q;
  q.reserve(matches.matches.size());
  for (const auto& m : matches.matches) {
    if (m.valid) q.push_back(m.confidence);
  }
  if (q.empty()) return 0.0;
  const size_t mid = q.size() / 2;
  std::nth_element(q.begin(), q.begin() + mid, q.end());
  return q[mid];
}

}  // namespace

std::vector<ResidualBlock> residual_blocks(
    const Sim3Pose& T_ref_src, const MatchSet& matches, const Pointmap& X_ref,
    const Pointmap& X_src, TrackMode mode, const RobustWeightParams& params,
    const PinholeIntrinsics* K) {
  if (mode == TrackMode::kPixel && K == nullptr) {
    throw std::invalid_argument("residual_blocks: pixel mode requires intrinsics");
  }
  const double sigma2 = mode == TrackMode::kRay    ? params.sigma2_ray
                        : mode == TrackMode::kPoint ? params.sigma2_point
                                                    : params.sigma2_pixel;

  std::vector<ResidualBlock> blocks(matches.matches.size());
  for (size_t k = 0; k < matches.matches.size(); ++k) {
    const Match& match = matches.matches[k];
    ResidualBlock& block = blocks[k];
    if (!match.valid || match.pixel_a < 0 || match.pixel_b < 0) continue;
    if (!X_ref.valid[match.pixel_b] || !X_src.valid[match.pixel_a]) continue;

    const double denom = robust_weight(match.confidence, sigma2, params.q_min);
    if (!std::isfinite(denom)) continue;  // excluded: exactly zero information
    const double info = 1.0 / denom;

    const Vec3& ref = X_ref.points[match.pixel_b];
    const Vec3 x = T_ref_src * X_src.points[match.pixel_a];
    const double d = x.norm();
    if (d < 1e-12) continue;

    int main_rows = 3;
    bool has_distance = true;
    switch (mode) {
      case TrackMode::kRay: {
        const double d_ref = ref.norm();
        if (d_ref < 1e-12) continue;
        const Vec3 xn = x / d;
        block.residual.head<3>() = ref / d_ref - xn;
        block.residual(3) = d_ref - d;
        const Mat3 P = (Mat3::Identity() - xn * xn.transpose()) / d;
        block.jacobian.block<3, 3>(0, 0) = -P;
        block.jacobian.block<3, 3>(0, 3) = skew(x) / d;
        // scale column of the ray rows is exactly zero
        block.jacobian.block<1, 3>(3, 0) = -xn.transpose();
        block.jacobian(3, 6) = -d;
        break;
      }
      case TrackMode::kPoint: {
        block.residual.head<3>() = ref - x;
        block.jacobian.block<3, 3>(0, 0) = -Mat3::Identity();
        block.jacobian.block<3, 3>(0, 3) = skew(x);
        block.jacobian.block<3, 1>(0, 6) = -x;
        has_distance = false;
        break;
      }
      case TrackMode::kPixel: {
        if (x.z() <= 1e-12 || ref.z() <= 1e-12) continue;
        const int u = match.pixel_b % X_ref.width;
        const int v = match.pixel_b / X_ref.width;
        const PinholeProjection proj = pinhole_project(x, *K);
        block.residual.head<2>() = Vec2(u, v) - proj.pixel;
        Eigen::Matrix<double, 3, 7> point_jac;
        point_jac.block<3, 3>(0, 0) = Mat3::Identity();
        point_jac.block<3, 3>(0, 3) = -skew(x);
        point_jac.col(6) = x;
        block.jacobian.block<2, 7>(0, 0) = -proj.jacobian * point_jac;
        block.residual(3) = ref.z() - x.z();
        block.jacobian.block<1, 7>(3, 0) = -point_jac.row(2);
        main_rows = 2;
        break;
      }
    }

    const double e =
        std::sqrt(info) * block.residual.head(main_rows).norm();
    const double w = info * huber_factor(e, params.huber_delta);
    block.weight.head(main_rows).setConstant(w);
    if (has_distance) {
      // The distance (depth) channel is robustified on its own residual: a
      // gross depth error can leave the direction rows clean, so the main-row
      // Huber factor must not vouch for it.
      const double info_d = params.distance_weight * info;
      const double e_d = std::sqrt(info_d) * std::abs(block.residual(3));
      block.weight(3) = info_d * huber_factor(e_d, params.huber_delta);
    }
    block.info = info;
    block.used = true;
  }
  return blocks;
}

double block_cost(const std::vector<ResidualBlock>& blocks,
                  const RobustWeightParams& params, TrackMode mode) {
  double cost = 0.0;
  const int main_rows = mode == TrackMode::kPixel ? 2 : 3;
  for (const auto& b : blocks) {
    if (!b.used) continue;
    const double e = std::sqrt(b.info) * b.residual.head(main_rows).norm();
    cost += huber_cost(e, params.huber_delta);
    const double e_d = std::sqrt(params.distance_weight * b.info) *
                       std::abs(b.residual(3));
    cost += huber_cost(e_d, params.huber_delta);
  }
  return cost;
}

TrackResult solve_pose(const Keyframe& keyframe, const FramePrediction& prediction,
                       const Sim3Pose& init, TrackMode mode,
                       const SolvePoseParams& params,
                       const MatchSet* match_seed) {
  TrackResult result;
  result.T_kf = init;

  MatchSet matches = match_pointmaps(prediction.X_f_f, prediction.X_k_f,
                                     prediction.F_f, prediction.F_k, match_seed,
                                     params.matching);
  if (params.refine_features) {
    matches = feature_refine(matches, prediction.F_f, prediction.F_k,
                             params.refinement);
  }
  result.matches = matches;

  if (matches.valid_count() < params.min_valid_matches) {
    result.lost = true;
    return result;
  }

  RobustWeightParams weights = params.weights;
  weights.q_min = weights.q_min_fraction * median_confidence(matches);
  const PinholeIntrinsics* K =
      params.intrinsics ? &*params.intrinsics : nullptr;

  auto evaluate = [&](const Sim3Pose& T) {
    return residual_blocks(T, matches, keyframe.canonical, prediction.X_f_f,
                           mode, weights, K);
  };

  auto blocks = evaluate(result.T_kf);
  double cost = block_cost(blocks, weights, mode);
  result.cost_trace.push_back(cost);

  // Gauss-Newton with Levenberg damping: near-singular geometry (e.g. pure
  // rotation with coplanar matches) must not launch unbounded steps.
  double lambda = 1e-8;
  for (int iter = 0; iter < params.max_iterations; ++iter) {
    Mat7 H = Mat7::Zero();
    Tangent7 g = Tangent7::Zero();
    for (const auto& b : blocks) {
      if (!b.used) continue;
      for (int r = 0; r < 4; ++r) {
        const double w = b.weight(r);
        if (w <= 0.0) continue;
        H.noalias() += w * b.jacobian.row(r).transpose() * b.jacobian.row(r);
        g.noalias() += w * b.jacobian.row(r).transpose() * b.residual(r);
      }
    }

    ++result.iterations;
    Mat7 H_damped = H;
    H_damped.diagonal() += lambda * H.diagonal().cwiseMax(1e-12);
    const Tangent7 tau = H_damped.ldlt().solve(-g);
    // Reject non-finite or overflowing steps the same way as cost increases.
    bool accepted = false;
    if (tau.allFinite() && tau.lpNorm<Eigen::Infinity>() < 1e3) {
      const Sim3Pose T_new = result.T_kf.retract(tau);
      auto blocks_new = evaluate(T_new);
      const double cost_new = block_cost(blocks_new, weights, mode);
      if (cost_new <= cost * (1.0 + 1e-12) + 1e-300) {
        result.T_kf = T_new;
        blocks = std::move(blocks_new);
        cost = cost_new;
        result.cost_trace.push_back(cost);
        lambda = std::max(lambda * 0.3, 1e-10);
        accepted = true;
        if (tau.norm() < params.update_tol) break;
      }
    }
    if (!accepted) {
      lambda *= 10.0;
      if (lambda > 1e8) break;
    }
  }
  return result;
}

void fuse_canonical(Keyframe& keyframe, const Pointmap& X_k_f,
                    const ConfidenceMap& confidence, const Sim3Pose& T_kf) {
  Pointmap& canonical = keyframe.canonical;
  ConfidenceMap& canonical_conf = keyframe.canonical_confidence;
  for (int i = 0; i < canonical.size(); ++i) {
    if (!X_k_f.valid[i]) continue;
    const double c = confidence.values[i];
    const double c_prev = canonical_conf.values[i];
    if (c_prev + c <= 0.0) continue;
    const Vec3 observed = T_kf * X_k_f.points[i];
    if (c_prev <= 0.0 || !canonical.valid[i]) {
      canonical.points[i] = observed;
    } else {
      canonical.points[i] =
          (c_prev * canonical.points[i] + c * observed) / (c_prev + c);
    }
    canonical.valid[i] = 1;
    canonical_conf.values[i] = c_prev + c;
  }
}

bool keyframe_decision(const MatchSet& matches, int height, int width,
                       double omega_k) {
  const int total = height * width;
  if (total <= 0) return true;
  const double valid_fraction =
      static_cast<double>(matches.valid_count()) / total;
  const double unique_fraction = matches.unique_pixel_fraction(total);
  return valid_fraction < omega_k || unique_fraction < omega_k;
}

}  // namespace pmslam
