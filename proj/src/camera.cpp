#include "pmslam/camera.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace pmslam {

int MatchSet::valid_count() const {
  int n = 0;
  for (const auto& m : matches) n += m.valid ? 1 : 0;
  return n;
}

double MatchSet::valid_fraction() const {
  if (matches.empty()) return 0.0;
  return static_cast<double>(valid_count()) / static_cast<double>(matches.size());
}

double MatchSet::unique_pixel_fraction(int num_pixels_a) const {
  if (num_pixels_a <= 0) return 0.0;
  std::unordered_set<int> hit;
  for (const auto& m : matches) {
    if (m.valid) hit.insert(m.pixel_a);
  }
  return static_cast<double>(hit.size()) / static_cast<double>(num_pixels_a);
}

MatchSet MatchSet::identity(int num_pixels, double confidence) {
  MatchSet set;
  set.matches.resize(num_pixels);
  for (int i = 0; i < num_pixels; ++i) {
    set.matches[i] = {i, i, confidence, true};
  }
  return set;
}

RayMap normalize_rays(const Pointmap& pm) {
  RayMap rm;
  rm.height = pm.height;
  rm.width = pm.width;
  const int n = pm.size();
  rm.rays.assign(n, Vec3::UnitZ());
  rm.distances.assign(n, 1.0);
  rm.valid.assign(n, 0);
  for (int i = 0; i < n; ++i) {
    if (!pm.valid[i]) continue;
    const double norm = pm.points[i].norm();
    if (norm < 1e-12 || !std::isfinite(norm)) continue;
    rm.rays[i] = pm.points[i] / norm;
    rm.distances[i] = norm;
    rm.valid[i] = 1;
  }
  return rm;
}

std::optional<Vec3> interpolate_ray(const RayMap& rays, const Vec2& p,
                                    Eigen::Matrix<double, 3, 2>* jacobian) {
  const double u = p.x();
  const double v = p.y();
  if (u < 0.0 || v < 0.0 || u > rays.width - 1 || v > rays.height - 1) {
    return std::nullopt;
  }
  int u0 = static_cast<int>(std::floor(u));
  int v0 = static_cast<int>(std::floor(v));
  u0 = std::min(u0, rays.width - 2 >= 0 ? rays.width - 2 : 0);
  v0 = std::min(v0, rays.height - 2 >= 0 ? rays.height - 2 : 0);
  const int u1 = std::min(u0 + 1, rays.width - 1);
  const int v1 = std::min(v0 + 1, rays.height - 1);
  const double fu = u - u0;
  const double fv = v - v0;

  const int i00 = rays.index(u0, v0);
  const int i10 = rays.index(u1, v0);
  const int i01 = rays.index(u0, v1);
  const int i11 = rays.index(u1, v1);
  if (!rays.valid[i00] || !rays.valid[i10] || !rays.valid[i01] || !rays.valid[i11]) {
    return std::nullopt;
  }
  const Vec3& r00 = rays.rays[i00];
  const Vec3& r10 = rays.rays[i10];
  const Vec3& r01 = rays.rays[i01];
  const Vec3& r11 = rays.rays[i11];

  const Vec3 g = (1 - fu) * (1 - fv) * r00 + fu * (1 - fv) * r10 +
                 (1 - fu) * fv * r01 + fu * fv * r11;
  const double gn = g.norm();
  if (gn < 1e-12) return std::nullopt;
  const Vec3 ray = g / gn;

  if (jacobian) {
    const Vec3 dg_du = (1 - fv) * (r10 - r00) + fv * (r11 - r01);
    const Vec3 dg_dv = (1 - fu) * (r01 - r00) + fu * (r11 - r10);
    const Mat3 proj = (Mat3::Identity() - ray * ray.transpose()) / gn;
    jacobian->col(0) = proj * dg_du;
    jacobian->col(1) = proj * dg_dv;
  }
  return ray;
}

namespace {

Vec2 clamp_to_image(const Vec2& p, int width, int height) {
  return Vec2(std::clamp(p.x(), 0.0, static_cast<double>(width - 1)),
              std::clamp(p.y(), 0.0, static_cast<double>(height - 1)));
}

double angular_error(const Vec3& a, const Vec3& b) {
  return std::acos(std::clamp(a.dot(b), -1.0, 1.0));
}

}  // namespace

ProjectResult iterative_project(const RayMap& rays, const Vec3& x, const Vec2& p0,
                                const IterProjParams& params) {
  ProjectResult result;
  const double xn = x.norm();
  if (xn < 1e-12 || !x.allFinite()) {
    result.pixel = clamp_to_image(p0, rays.width, rays.height);
    return result;
  }
  const Vec3 target = x / xn;

  Vec2 p = clamp_to_image(p0, rays.width, rays.height);
  Eigen::Matrix<double, 3, 2> J;
  auto ray = interpolate_ray(rays, p, &J);
  if (!ray) {
    result.pixel = p;
    return result;
  }
  double cost = (*ray - target).squaredNorm();
  if (angular_error(*ray, target) < params.angle_tol) {
    result.pixel = p;
    result.converged = true;
    return result;
  }

  double lambda = params.lambda_init;
  for (int iter = 0; iter < params.max_iterations; ++iter) {
    ++result.iterations;
    const Vec3 r = *ray - target;
    const Eigen::Matrix2d JtJ = J.transpose() * J;
    const Vec2 g = J.transpose() * r;
    Eigen::Matrix2d H = JtJ;
    H.diagonal() += lambda * JtJ.diagonal().cwiseMax(1e-12);
    const Vec2 delta = -H.ldlt().solve(g);
    if (!delta.allFinite()) break;

    const Vec2 p_trial = clamp_to_image(p + delta, rays.width, rays.height);
    Eigen::Matrix<double, 3, 2> J_trial;
    auto ray_trial = interpolate_ray(rays, p_trial, &J_trial);
    if (ray_trial) {
      const double cost_trial = (*ray_trial - target).squaredNorm();
      if (cost_trial < cost) {
        p = p_trial;
        ray = ray_trial;
        J = J_trial;
        cost = cost_trial;
        lambda *= params.lambda_down;
        if (angular_error(*ray, target) < params.angle_tol) {
          result.pixel = p;
          result.converged = true;
          return result;
        }
        continue;
      }
    }
    lambda *= params.lambda_up;
  }
  result.pixel = p;
  result.converged = angular_error(*ray, target) < params.angle_tol;
  return result;
}

namespace {

double median_scene_distance(const Pointmap& pm) {
  std::vector<double> norms;
  norms.reserve(pm.size());
  for (int i = 0; i < pm.size(); ++i) {
    if (pm.valid[i]) {
      const double n = pm.points[i].norm();
      if (n > 1e-12) norms.push_back(n);
    }
  }
  if (norms.empty()) return 0.0;
  const size_t mid = norms.size() / 2;
  std::nth_element(norms.begin(), norms.begin() + mid, norms.end());
  return norms[mid];
}

}  // namespace

MatchSet match_pointmaps(const Pointmap& X_a, const Pointmap& X_b_in_a,
                         const FeatureMap& F_a, const FeatureMap& F_b,
                         const MatchSet* init, const MatchParams& params) {
  const RayMap rays_a = normalize_rays(X_a);
  const double dist_threshold =
      params.invalidation_median_fraction * median_scene_distance(X_a);

  // Seed lookup: pixel of b -> previous pixel in a.
  std::vector<int> seed(X_b_in_a.size(), -1);
  if (init) {
    for (const auto& m : init->matches) {
      if (m.valid && m.pixel_b >= 0 && m.pixel_b < X_b_in_a.size()) {
        seed[m.pixel_b] = m.pixel_a;
      }
    }
  }

  MatchSet out;
  out.matches.resize(X_b_in_a.size());
  for (int n = 0; n < X_b_in_a.size(); ++n) {
    Match& m = out.matches[n];
    m.pixel_b = n;
    if (!X_b_in_a.valid[n]) continue;
    const Vec3& x = X_b_in_a.points[n];
    if (x.norm() < 1e-12) continue;

    const int seed_pixel = seed[n] >= 0 ? seed[n] : n;
    const Vec2 p0(seed_pixel % X_a.width, seed_pixel / X_a.width);
    const ProjectResult proj = iterative_project(rays_a, x, p0, params.projection);

    const int pu = static_cast<int>(std::lround(proj.pixel.x()));
    const int pv = static_cast<int>(std::lround(proj.pixel.y()));
    const int pa = std::clamp(pv, 0, X_a.height - 1) * X_a.width +
                   std::clamp(pu, 0, X_a.width - 1);
    m.pixel_a = pa;
    m.confidence = std::sqrt(F_a.match_confidence[pa] * F_b.match_confidence[n]);
    if (!proj.converged || !X_a.valid[pa]) continue;
    // 3D invalidation against gross depth outliers and occlusions.
    if ((X_a.points[pa] - x).norm() > dist_threshold) continue;
    m.valid = true;
  }
  return out;
}

MatchSet feature_refine(const MatchSet& matches, const FeatureMap& F_a,
                        const FeatureMap& F_b, const RefineParams& params) {
  MatchSet out = matches;
  for (auto& m : out.matches) {
    if (!m.valid || m.pixel_a < 0 || m.pixel_b < 0) continue;
    int best_u = m.pixel_a % F_a.width;
    int best_v = m.pixel_a / F_a.width;
    const auto target = F_b.descriptors.col(m.pixel_b);
    for (const auto& [stride, radius] : params.levels) {
      const int cu = best_u;
      const int cv = best_v;
      double best_score = F_a.descriptors.col(F_a.index(best_u, best_v)).dot(target);
      for (int dv = -radius; dv <= radius; ++dv) {
        for (int du = -radius; du <= radius; ++du) {
          const int u = cu + du * stride;
          const int v = cv + dv * stride;
          if (u < 0 || v < 0 || u >= F_a.width || v >= F_a.height) continue;
          const double score = F_a.descriptors.col(F_a.index(u, v)).dot(target);
          // Strict improvement only; ties keep the geometric pixel.
          if (score > best_score) {
            best_score = score;
            best_u = u;
            best_v = v;
          }
        }
      }
    }
    m.pixel_a = F_a.index(best_u, best_v);
    m.confidence =
        std::sqrt(F_a.match_confidence[m.pixel_a] * F_b.match_confidence[m.pixel_b]);
  }
  return out;
}

Pointmap backproject_depth(const std::vector<double>& depth, int height, int width,
                           const PinholeIntrinsics& K) {
  if (static_cast<int>(depth.size()) != height * width) {
    throw std::invalid_argument("backproject_depth: depth size mismatch");
  }
  Pointmap pm(height, width);
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      const int i = pm.index(u, v);
      const double d = depth[i];
      if (!(d > 0.0) || !std::isfinite(d)) {
        pm.valid[i] = 0;
        continue;
      }
      pm.points[i] = d * Vec3((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
    }
  }
  return pm;
}

PinholeProjection pinhole_project(const Vec3& x, const PinholeIntrinsics& K) {
  const double z = x.z();
  if (!(z > 0.0)) {
    throw std::domain_error("pinhole_project: point behind camera");
  }
  PinholeProjection out;
  out.pixel = Vec2(K.fx * x.x() / z + K.cx, K.fy * x.y() / z + K.cy);
  out.jacobian << K.fx / z, 0.0, -K.fx * x.x() / (z * z),
                  0.0, K.fy / z, -K.fy * x.y() / (z * z);
  return out;
}

}  // namespace pmslam
