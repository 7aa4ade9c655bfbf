#include <cmath>

#include "doctest.h"
#include "pmslam/synth.hpp"

using namespace pmslam;

TEST_CASE("trajectories are deterministic and well-formed") {
  for (const auto kind : {TrajectoryKind::kOrbit, TrajectoryKind::kLoop,
                          TrajectoryKind::kPureRotation, TrajectoryKind::kZoomLike}) {
    const auto a = make_trajectory(kind, 20, 3);
    const auto b = make_trajectory(kind, 20, 3);
    REQUIRE(a.size() == 20);
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK((a[i].rotation() - b[i].rotation()).norm() == 0.0);
      CHECK((a[i].translation() - b[i].translation()).norm() == 0.0);
      CHECK(a[i].scale() == b[i].scale());
      CHECK(std::abs(a[i].scale() - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("pure rotation keeps the camera centre fixed") {
  const auto poses = make_trajectory(TrajectoryKind::kPureRotation, 15, 9);
  for (const auto& T : poses) {
    CHECK((T.translation() - poses[0].translation()).norm() <= 1e-12);
  }
}

TEST_CASE("loop trajectory closes") {
  const auto poses = make_trajectory(TrajectoryKind::kLoop, 20, 5);
  double path = 0.0;
  for (size_t i = 1; i < poses.size(); ++i) {
    path += (poses[i].translation() - poses[i - 1].translation()).norm();
  }
  const double gap = (poses.back().translation() - poses.front().translation()).norm();
  CHECK(gap < 0.01 * path);
}

TEST_CASE("render_view is consistent between local and world points") {
  const SyntheticScene scene = make_scene(4);
  const auto poses = make_trajectory(TrajectoryKind::kOrbit, 8, 4);
  const RenderResult view = render_view(scene, poses[2], 48, 64);
  int valid = 0;
  for (int i = 0; i < 48 * 64; ++i) {
    if (!view.local_points.valid[i]) continue;
    ++valid;
    CHECK((poses[2] * view.local_points.points[i] - view.world_points[i]).norm() <=
          1e-9);
    CHECK(view.distances[i] ==
          doctest::Approx(view.local_points.points[i].norm()).epsilon(1e-12));
    CHECK(view.local_points.points[i].z() > 0.0);
  }
  // Closed room: every pixel sees surface (>= 60% contract, here 100%).
  CHECK(valid >= static_cast<int>(0.6 * 48 * 64));
  CHECK(valid == 48 * 64);
}

TEST_CASE("descriptor field is unit-norm and deterministic") {
  const SyntheticScene scene = make_scene(12);
  const Vec3 x(1.0, -0.5, 2.0);
  const Eigen::VectorXd d1 = descriptor_at(scene, x);
  const Eigen::VectorXd d2 = descriptor_at(make_scene(12), x);
  CHECK(d1.size() == scene.descriptor_dim);
  CHECK(std::abs(d1.norm() - 1.0) <= 1e-12);
  CHECK((d1 - d2).norm() == 0.0);
  // Different surface points get distinct descriptors.
  CHECK((d1 - descriptor_at(scene, Vec3(-2.0, 1.0, -1.0))).norm() > 1e-3);
}

TEST_CASE("predict_pair self-pair with zero noise is exact") {
  const SyntheticScene scene = make_scene(6);
  const auto poses = make_trajectory(TrajectoryKind::kOrbit, 6, 6);
  const PredictionPair pair = predict_pair(scene, poses[0], poses[0], NoiseModel{}, 48, 64);
  for (int i = 0; i < 48 * 64; ++i) {
    CHECK((pair.X_i_in_i.points[i] - pair.X_j_in_i.points[i]).norm() <= 1e-12);
    CHECK(pair.C_i.values[i] == doctest::Approx(1.0));  // zero injected error
    CHECK(pair.C_j.values[i] == doctest::Approx(1.0));
  }
  CHECK(pair.scale_jitter == doctest::Approx(1.0));
}

TEST_CASE("noiseless predict_pair reproduces the true relative geometry") {
  const SyntheticScene scene = make_scene(6);
  const auto poses = make_trajectory(TrajectoryKind::kOrbit, 6, 6);
  const Sim3Pose T_ij = relative_pose(poses[1], poses[3]);
  const PredictionPair pair = predict_pair(scene, poses[1], poses[3], NoiseModel{}, 48, 64);
  const RenderResult view_j = render_view(scene, poses[3], 48, 64);
  for (int i = 0; i < 48 * 64; ++i) {
    CHECK((pair.X_j_in_i.points[i] - T_ij * view_j.local_points.points[i]).norm() <=
          1e-9);
  }
}

TEST_CASE("predict_pair is deterministic per (pair, salt)") {
  const SyntheticScene scene = make_scene(8);
  const auto poses = make_trajectory(TrajectoryKind::kLoop, 6, 8);
  NoiseModel noise;
  noise.depth_sigma = 0.05;
  noise.outlier_fraction = 0.1;
  noise.scale_jitter_sigma = 0.2;
  const PredictionPair a = predict_pair(scene, poses[0], poses[1], noise, 32, 32, 77);
  const PredictionPair b = predict_pair(scene, poses[0], poses[1], noise, 32, 32, 77);
  const PredictionPair c = predict_pair(scene, poses[0], poses[1], noise, 32, 32, 78);
  double diff_ab = 0.0, diff_ac = 0.0;
  for (int i = 0; i < 32 * 32; ++i) {
    diff_ab += (a.X_j_in_i.points[i] - b.X_j_in_i.points[i]).norm();
    diff_ac += (a.X_j_in_i.points[i] - c.X_j_in_i.points[i]).norm();
  }
  CHECK(diff_ab == 0.0);
  CHECK(diff_ac > 1e-6);  // different salt, different noise draw
}

TEST_CASE("scale jitter is a pure per-pair gauge") {
  const SyntheticScene scene = make_scene(8);
  const auto poses = make_trajectory(TrajectoryKind::kOrbit, 6, 8);
  NoiseModel noise;
  noise.scale_jitter_sigma = 0.1;
  const PredictionPair pair = predict_pair(scene, poses[0], poses[2], noise, 48, 64, 1);
  const PredictionPair clean = predict_pair(scene, poses[0], poses[2], NoiseModel{}, 48, 64, 1);
  REQUIRE(std::abs(pair.scale_jitter - 1.0) > 1e-4);
  for (int i = 0; i < 48 * 64; i += 7) {
    // Both pointmaps scaled by the identical factor...
    CHECK((pair.X_i_in_i.points[i] - pair.scale_jitter * clean.X_i_in_i.points[i])
              .norm() <= 1e-9);
    CHECK((pair.X_j_in_i.points[i] - pair.scale_jitter * clean.X_j_in_i.points[i])
              .norm() <= 1e-9);
    // ...so frame i's ray field is unchanged.
    CHECK((pair.X_i_in_i.points[i].normalized() -
           clean.X_i_in_i.points[i].normalized())
              .norm() <= 1e-12);
    // Jitter is gauge, not error: confidence unaffected.
    CHECK(pair.C_i.values[i] == doctest::Approx(1.0));
  }
  // Two pairs sharing frame i draw independent jitters.
  const PredictionPair other = predict_pair(scene, poses[0], poses[3], noise, 48, 64, 2);
  CHECK(std::abs(other.scale_jitter - pair.scale_jitter) > 1e-6);
}

TEST_CASE("confidence anticorrelates with injected depth error") {
  const SyntheticScene scene = make_scene(8);
  const auto poses = make_trajectory(TrajectoryKind::kOrbit, 6, 8);
  NoiseModel noise;
  noise.depth_sigma = 0.05;
  const PredictionPair pair = predict_pair(scene, poses[0], poses[1], noise, 48, 64, 3);
  const RenderResult view_i = render_view(scene, poses[0], 48, 64);
  for (int i = 0; i < 48 * 64; i += 11) {
    const double rel_err = (pair.X_i_in_i.points[i] - view_i.local_points.points[i])
                               .norm() /
                           view_i.local_points.points[i].norm();
    CHECK(pair.C_i.values[i] == doctest::Approx(1.0 / (1.0 + rel_err)).epsilon(1e-6));
  }
}

TEST_CASE("ground_truth_matches: self-pair identity and occlusion handling") {
  const SyntheticScene scene = make_scene(10);
  REQUIRE(!scene.spheres.empty());
  const auto poses = make_trajectory(TrajectoryKind::kOrbit, 30, 10);

  const MatchSet self = ground_truth_matches(scene, poses[0], poses[0], 48, 64);
  for (int i = 0; i < 48 * 64; ++i) {
    REQUIRE(self.matches[i].valid);
    CHECK(self.matches[i].pixel_a == i);
    CHECK(self.matches[i].pixel_b == i);
  }

  // A wider-baseline pair must drop some pixels (parallax + occlusion), and
  // every kept match must be geometrically consistent with the renderer.
  const Sim3Pose T_iw = poses[0].inverse();
  const RenderResult view_i = render_view(scene, poses[0], 48, 64);
  const RenderResult view_j = render_view(scene, poses[3], 48, 64);
  const MatchSet gt = ground_truth_matches(scene, poses[0], poses[3], 48, 64);
  int valid = 0;
  for (int i = 0; i < 48 * 64; ++i) {
    if (!gt.matches[i].valid) continue;
    ++valid;
    const Vec3 in_i = T_iw * view_j.world_points[i];
    const Vec3 seen = view_i.local_points.points[gt.matches[i].pixel_a];
    // Within the z-buffer tolerance of the pixel actually seen by view i.
    CHECK(in_i.norm() <= seen.norm() * 1.03 + 1e-6);
  }
  CHECK(valid > 48 * 64 / 3);
  CHECK(valid < 48 * 64);
}
