#include "pmslam/synth.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace pmslam {

namespace {

Mat3 look_at_rotation(const Vec3& forward_world) {
  // Camera convention: x right, y down, z forward; world up is -y.
  const Vec3 f = forward_world.normalized();
  const Vec3 up_w(0.0, 1.0, 0.0);
  Vec3 r = up_w.cross(f);
  if (r.norm() < 1e-6) {
    r = Vec3(1.0, 0.0, 0.0);
  }
  r.normalize();
  const Vec3 d = f.cross(r);
  Mat3 R;
  R.col(0) = r;
  R.col(1) = d;
  R.col(2) = f;
  return R;
}

// Distance along unit dir to the nearest surface, cast from inside the room.
double cast_ray(const SyntheticScene& scene, const Vec3& origin, const Vec3& dir) {
  double t_hit = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-12) continue;
    const double face = dir[a] > 0 ? scene.room_half_extents[a] : -scene.room_half_extents[a];
    const double t = (face - origin[a]) / dir[a];
    if (t > 1e-9 && t < t_hit) t_hit = t;
  }
  for (const auto& sphere : scene.spheres) {
    const Vec3 oc = origin - sphere.center;
    const double b = oc.dot(dir);
    const double c = oc.squaredNorm() - sphere.radius * sphere.radius;
    const double disc = b * b - c;
    if (disc < 0.0) continue;
    const double sq = std::sqrt(disc);
    for (const double t : {-b - sq, -b + sq}) {
      if (t > 1e-6 && t < t_hit) t_hit = t;
    }
  }
  return t_hit;
}

}  // namespace

SyntheticScene make_scene(uint64_t seed, int descriptor_dim) {
  SyntheticScene scene;
  scene.seed = seed;
  scene.descriptor_dim = descriptor_dim;
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // Low-frequency descriptor field: distinct scene regions stay separable.
  scene.descriptor_freqs.resize(descriptor_dim, 3);
  scene.descriptor_phases.resize(descriptor_dim);
  for (int k = 0; k < descriptor_dim; ++k) {
    for (int a = 0; a < 3; ++a) scene.descriptor_freqs(k, a) = 1.5 * gauss(rng);
    scene.descriptor_phases(k) = 2.0 * M_PI * unif(rng);
  }

  // Per-seed room proportions: unrelated scenes must not share wall geometry.
  scene.room_half_extents =
      Vec3(3.0 * (0.75 + 0.5 * unif(rng)), 2.0 * (0.75 + 0.5 * unif(rng)),
           3.0 * (0.75 + 0.5 * unif(rng)));

  const int n_spheres = 2 + static_cast<int>(rng() % 2);
  for (int k = 0; k < n_spheres; ++k) {
    SyntheticScene::Sphere s;
    s.center = Vec3(1.6 * (unif(rng) - 0.5) * scene.room_half_extents.x(),
                    1.2 * (unif(rng) - 0.5) * scene.room_half_extents.y(),
                    1.6 * (unif(rng) - 0.5) * scene.room_half_extents.z());
    s.radius = 0.25 + 0.35 * unif(rng);
    scene.spheres.push_back(s);
  }
  return scene;
}

Eigen::VectorXd descriptor_at(const SyntheticScene& scene, const Vec3& x_world) {
  Eigen::VectorXd d(scene.descriptor_dim);
  for (int k = 0; k < scene.descriptor_dim; ++k) {
    d(k) = std::cos(scene.descriptor_freqs.row(k).dot(x_world) +
                    scene.descriptor_phases(k));
  }
  const double n = d.norm();
  if (n > 1e-12) d /= n;
  return d;
}

TrajectoryKind trajectory_kind_from_string(const std::string& name) {
  if (name == "orbit") return TrajectoryKind::kOrbit;
  if (name == "loop") return TrajectoryKind::kLoop;
  if (name == "pure_rotation") return TrajectoryKind::kPureRotation;
  if (name == "zoom_like") return TrajectoryKind::kZoomLike;
  throw std::invalid_argument("unknown trajectory kind: " + name);
}

std::vector<Sim3Pose> make_trajectory(TrajectoryKind kind, int n_frames,
                                      uint64_t seed) {
  if (n_frames < 2) {
    throw std::invalid_argument("make_trajectory: n_frames must be >= 2");
  }
  std::mt19937_64 rng(seed * 0x2545f4914f6cdd1dULL + 7);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double phase = 2.0 * M_PI * unif(rng);
  const double radius = 1.2 + 0.5 * unif(rng);
  const double y0 = 0.4 * (unif(rng) - 0.5);

  std::vector<Sim3Pose> poses;
  poses.reserve(n_frames);
  for (int k = 0; k < n_frames; ++k) {
    Vec3 centre;
    Vec3 forward;
    switch (kind) {
      case TrajectoryKind::kOrbit: {
        const double th = phase + 2.0 * M_PI * k / n_frames;
        centre = Vec3(radius * std::cos(th), y0, radius * std::sin(th));
        forward = (Vec3(0.0, 0.0, 0.0) - centre).normalized();
        break;
      }
      case TrajectoryKind::kLoop: {
        // Closes exactly: the last pose equals the first.
        const double th = phase + 2.0 * M_PI * k / (n_frames - 1);
        centre = Vec3(radius * std::cos(th), y0, radius * std::sin(th));
        forward = Vec3(-std::sin(th), 0.0, std::cos(th));
        break;
      }
      case TrajectoryKind::kPureRotation: {
        const double th = phase + 2.0 * M_PI * k / n_frames;
        centre = Vec3(0.0, y0, 0.0);
        forward = Vec3(std::sin(th), 0.0, std::cos(th));
        break;
      }
      case TrajectoryKind::kZoomLike: {
        const double f = static_cast<double>(k) / (n_frames - 1);
        centre = Vec3(0.0, y0, -2.0 + 2.5 * f);
        forward = Vec3(0.0, 0.0, 1.0);
        break;
      }
    }
    poses.emplace_back(look_at_rotation(forward), centre, 1.0);
  }
  return poses;
}

PinholeIntrinsics render_intrinsics(int height, int width) {
  PinholeIntrinsics K;
  K.fx = 0.6 * width;
  K.fy = 0.6 * width;
  K.cx = 0.5 * (width - 1);
  K.cy = 0.5 * (height - 1);
  return K;
}

RenderResult render_view(const SyntheticScene& scene, const Sim3Pose& T_wc,
                         int height, int width) {
  const PinholeIntrinsics K = render_intrinsics(height, width);
  RenderResult result;
  result.local_points = Pointmap(height, width);
  result.world_points.resize(height * width);
  result.distances.resize(height * width);
  const Sim3Pose T_cw = T_wc.inverse();
  const Vec3 origin = T_wc.translation();
  int hits = 0;
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      const int i = result.local_points.index(u, v);
      const Vec3 dir_cam =
          Vec3((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0).normalized();
      const Vec3 dir_world = (T_wc.rotation() * dir_cam).normalized();
      const double t = cast_ray(scene, origin, dir_world);
      if (!std::isfinite(t)) {
        result.local_points.valid[i] = 0;
        continue;
      }
      const Vec3 p_world = origin + t * dir_world;
      result.world_points[i] = p_world;
      result.local_points.points[i] = T_cw * p_world;
      result.distances[i] = result.local_points.points[i].norm();
      ++hits;
    }
  }
  if (hits == 0) {
    throw std::runtime_error("render_view: camera sees no surface");
  }
  return result;
}

PredictionPair predict_pair(const SyntheticScene& scene, const Sim3Pose& T_wi,
                            const Sim3Pose& T_wj, const NoiseModel& noise,
                            int height, int width, uint64_t salt) {
  std::mt19937_64 rng(scene.seed * 0xda942042e4dd58b5ULL + salt * 0x9e3779b97f4a7c15ULL + 3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const double jitter =
      noise.scale_jitter_sigma > 0.0
          ? std::exp(noise.scale_jitter_sigma * gauss(rng))
          : 1.0;

  const RenderResult view_i = render_view(scene, T_wi, height, width);
  const RenderResult view_j = render_view(scene, T_wj, height, width);
  const Sim3Pose T_ij = relative_pose(T_wi, T_wj);

  PredictionPair pair;
  pair.scale_jitter = jitter;
  pair.X_i_in_i = Pointmap(height, width);
  pair.X_j_in_i = Pointmap(height, width);
  pair.C_i = ConfidenceMap(height, width);
  pair.C_j = ConfidenceMap(height, width);
  pair.F_i = FeatureMap(height, width, scene.descriptor_dim);
  pair.F_j = FeatureMap(height, width, scene.descriptor_dim);

  // Depth noise is radial in each view's own frame; the global scale jitter
  // models per-prediction gauge and is not reflected in the confidences.
  auto corrupt = [&](const Vec3& local, double* rel_error) {
    double factor = 1.0 + noise.depth_sigma * gauss(rng);
    if (noise.outlier_fraction > 0.0 && unif(rng) < noise.outlier_fraction) {
      factor *= noise.outlier_magnitude;
    }
    factor = std::max(factor, 0.05);
    *rel_error = std::abs(factor - 1.0);
    return factor * local;
  };

  const int n = height * width;
  for (int i = 0; i < n; ++i) {
    pair.X_i_in_i.valid[i] = view_i.local_points.valid[i];
    double e = 0.0;
    if (view_i.local_points.valid[i]) {
      pair.X_i_in_i.points[i] = jitter * corrupt(view_i.local_points.points[i], &e);
      pair.F_i.descriptors.col(i) = descriptor_at(scene, view_i.world_points[i]);
    }
    pair.C_i.values[i] = 1.0 / (1.0 + e);
    pair.F_i.match_confidence[i] = 1.0 / (1.0 + e);
  }
  for (int i = 0; i < n; ++i) {
    pair.X_j_in_i.valid[i] = view_j.local_points.valid[i];
    double e = 0.0;
    if (view_j.local_points.valid[i]) {
      pair.X_j_in_i.points[i] =
          jitter * (T_ij * corrupt(view_j.local_points.points[i], &e));
      pair.F_j.descriptors.col(i) = descriptor_at(scene, view_j.world_points[i]);
    }
    pair.C_j.values[i] = 1.0 / (1.0 + e);
    pair.F_j.match_confidence[i] = 1.0 / (1.0 + e);
  }
  return pair;
}

MatchSet ground_truth_matches(const SyntheticScene& scene, const Sim3Pose& T_wi,
                              const Sim3Pose& T_wj, int height, int width) {
  const RenderResult view_i = render_view(scene, T_wi, height, width);
  const RenderResult view_j = render_view(scene, T_wj, height, width);
  const PinholeIntrinsics K = render_intrinsics(height, width);
  const Sim3Pose T_iw = T_wi.inverse();

  MatchSet out;
  out.matches.resize(height * width);
  for (int ni = 0; ni < height * width; ++ni) {
    Match& m = out.matches[ni];
    m.pixel_b = ni;
    if (!view_j.local_points.valid[ni]) continue;
    const Vec3 x_i = T_iw * view_j.world_points[ni];
    if (x_i.z() <= 1e-9) continue;
    const Vec2 p = pinhole_project(x_i, K).pixel;
    const int pu = static_cast<int>(std::lround(p.x()));
    const int pv = static_cast<int>(std::lround(p.y()));
    if (pu < 0 || pv < 0 || pu >= width || pv >= height) continue;
    const int mi = pv * width + pu;
    // Occlusion: the pixel in view i must see (approximately) the same depth.
    const double d_seen = view_i.distances[mi];
    const double d_point = x_i.norm();
    if (d_point > d_seen * 1.03 + 1e-6) continue;
    m.pixel_a = mi;
    m.confidence = 1.0;
    m.valid = true;
  }
  return out;
}

}  // namespace pmslam
