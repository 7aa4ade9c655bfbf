#include <filesystem>
#include <random>

#include "doctest.h"
#include "pmslam/retrieval.hpp"
#include "pmslam/synth.hpp"

using namespace pmslam;

namespace {

std::mt19937_64 rng(31);

DescriptorSet random_descriptors(int dim, int count) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  DescriptorSet d(dim, count);
  for (int c = 0; c < count; ++c) {
    for (int r = 0; r < dim; ++r) d(r, c) = gauss(rng);
  }
  return d;
}

// Descriptors drawn near a fixed set of cluster means ("a place"): two draws
// with the same seed base describe a revisit, a different base a new place.
DescriptorSet place_descriptors(int dim, int count, uint64_t place_seed,
                                uint64_t draw_seed, double spread = 0.15) {
  std::mt19937_64 place_rng(place_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n_means = 12;
  DescriptorSet means(dim, n_means);
  for (int c = 0; c < n_means; ++c) {
    for (int r = 0; r < dim; ++r) means(r, c) = gauss(place_rng);
  }
  std::mt19937_64 draw_rng(draw_seed);
  std::normal_distribution<double> jitter(0.0, spread);
  DescriptorSet out(dim, count);
  for (int c = 0; c < count; ++c) {
    out.col(c) = means.col(draw_rng() % n_means);
    for (int r = 0; r < dim; ++r) out(r, c) += jitter(draw_rng);
  }
  return out;
}

Codebook training_codebook(int dim, int words, uint64_t seed) {
  return build_codebook(random_descriptors(dim, 40 * words), words, seed);
}

}  // namespace

TEST_CASE("quantize: exact centroid hit and lowest-id tie break") {
  Codebook cb;
  cb.centroids.resize(2, 3);
  cb.centroids.col(0) = Eigen::Vector2d(0.0, 0.0);
  cb.centroids.col(1) = Eigen::Vector2d(2.0, 0.0);
  cb.centroids.col(2) = Eigen::Vector2d(0.0, 2.0);

  DescriptorSet q(2, 3);
  q.col(0) = Eigen::Vector2d(2.0, 0.0);  // exactly centroid 1
  q.col(1) = Eigen::Vector2d(1.0, 0.0);  // tie between words 0 and 1
  q.col(2) = Eigen::Vector2d(0.1, 1.8);
  const auto words = quantize(q, cb);
  CHECK(words[0] == 1);
  CHECK(words[1] == 0);  // tie breaks to the lowest word id
  CHECK(words[2] == 2);
}

TEST_CASE("quantize equals brute-force nearest centroid on 1k descriptors") {
  const Codebook cb = training_codebook(8, 32, 3);
  const DescriptorSet q = random_descriptors(8, 1000);
  const auto words = quantize(q, cb);
  REQUIRE(static_cast<int>(words.size()) == 1000);
  for (int i = 0; i < 1000; ++i) {
    int best = 0;
    double best_d = (q.col(i) - cb.centroids.col(0)).squaredNorm();
    for (int w = 1; w < cb.count(); ++w) {
      const double d = (q.col(i) - cb.centroids.col(w)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = w;
      }
    }
    CHECK(words[i] == best);
  }
}

TEST_CASE("codebook build determinism and save/load roundtrip") {
  const DescriptorSet training = random_descriptors(6, 600);
  const Codebook a = build_codebook(training, 16, 7);
  const Codebook b = build_codebook(training, 16, 7);
  REQUIRE(a.count() == 16);
  CHECK((a.centroids - b.centroids).cwiseAbs().maxCoeff() == 0.0);

  const std::string path =
      (std::filesystem::temp_directory_path() / "pmslam_codebook_test.bin").string();
  save_codebook(a, path);
  const Codebook loaded = load_codebook(path);
  std::filesystem::remove(path);
  REQUIRE(loaded.dim() == a.dim());
  REQUIRE(loaded.count() == a.count());
  // Storage is float32: the roundtrip reproduces the float32 quantization.
  for (int c = 0; c < a.count(); ++c) {
    for (int r = 0; r < a.dim(); ++r) {
      CHECK(loaded.centroids(r, c) == static_cast<double>(
                                          static_cast<float>(a.centroids(r, c))));
    }
  }
  CHECK_THROWS_AS((void)load_codebook(path + ".missing"), std::runtime_error);
}

TEST_CASE("index: self-query scores 1 and ranks first; duplicates rejected") {
  RetrievalIndex index(training_codebook(8, 24, 5));
  const DescriptorSet f0 = place_descriptors(8, 200, 100, 1);
  const DescriptorSet f1 = place_descriptors(8, 200, 200, 2);
  index.add(0, f0);
  index.add(1, f1);
  CHECK(index.size() == 2);
  CHECK(index.contains(0));
  CHECK(!index.contains(7));
  CHECK_THROWS_AS(index.add(0, f0), std::invalid_argument);

  const auto results = index.query(f0, 5, 0.0);
  REQUIRE(!results.empty());
  CHECK(results[0].kf_id == 0);
  CHECK(results[0].score == doctest::Approx(1.0).epsilon(1e-9));
  for (size_t k = 1; k < results.size(); ++k) {
    CHECK(results[k].score <= results[0].score);
  }
}

TEST_CASE("planted revisit outranks a distinct place") {
  RetrievalIndex index(training_codebook(8, 24, 9));
  // Keyframe 0 and the query observe place A; keyframe 1 observes place B.
  index.add(0, place_descriptors(8, 300, 111, 1));
  index.add(1, place_descriptors(8, 300, 222, 2));
  const DescriptorSet revisit = place_descriptors(8, 300, 111, 3);

  const auto results = index.query(revisit, 5, 0.0);
  REQUIRE(results.size() == 2);
  double score_a = 0.0, score_b = 0.0;
  for (const auto& r : results) (r.kf_id == 0 ? score_a : score_b) = r.score;
  CHECK(score_a > score_b);

  // omega_r filter: everything below a high threshold disappears.
  CHECK(index.query(revisit, 5, 1.1).empty());
  // exclusion of the preceding keyframe.
  const auto excluded = index.query(revisit, 5, 0.0, 0);
  for (const auto& r : excluded) CHECK(r.kf_id != 0);
  // determinism.
  const auto again = index.query(revisit, 5, 0.0);
  REQUIRE(again.size() == results.size());
  for (size_t k = 0; k < again.size(); ++k) {
    CHECK(again[k].kf_id == results[k].kf_id);
    CHECK(again[k].score == results[k].score);
  }
}

TEST_CASE("scores are symmetric in the planted-pair roles") {
  const Codebook cb = training_codebook(8, 24, 13);
  const DescriptorSet f_a = place_descriptors(8, 250, 333, 1);
  const DescriptorSet f_b = place_descriptors(8, 250, 333, 2);

  RetrievalIndex forward(cb);
  forward.add(0, f_a);
  RetrievalIndex backward(cb);
  backward.add(0, f_b);

  const auto qa = forward.query(f_b, 1, 0.0);
  const auto qb = backward.query(f_a, 1, 0.0);
  REQUIRE(qa.size() == 1);
  REQUIRE(qb.size() == 1);
  CHECK(qa[0].score == doctest::Approx(qb[0].score).epsilon(1e-9));
}

TEST_CASE("append-only: later insertions never change earlier pair scores") {
  const Codebook cb = training_codebook(8, 24, 17);
  RetrievalIndex index(cb);
  index.add(0, place_descriptors(8, 200, 1, 1));
  index.add(1, place_descriptors(8, 200, 2, 2));
  const DescriptorSet probe = place_descriptors(8, 200, 1, 9);
  const auto before = index.query(probe, 2, 0.0);

  index.add(2, place_descriptors(8, 200, 3, 3));
  index.add(3, place_descriptors(8, 200, 1, 4));
  const auto after = index.query(probe, 10, 0.0);
  for (const auto& b : before) {
    bool found = false;
    for (const auto& a : after) {
      if (a.kf_id == b.kf_id) {
        CHECK(a.score == b.score);
        found = true;
      }
    }
    CHECK(found);
  }
}

TEST_CASE("zero-residual words carry no signature") {
  Codebook cb;
  cb.centroids = random_descriptors(6, 4);
  RetrievalIndex index(cb);
  // Every descriptor sits exactly at a centroid: all aggregated residuals are
  // zero and excluded, so the keyframe contributes nothing scoreable.
  DescriptorSet at_centroids(6, 8);
  for (int c = 0; c < 8; ++c) at_centroids.col(c) = cb.centroids.col(c % 4);
  index.add(5, at_centroids);
  CHECK(index.size() == 1);
  const auto results = index.query(at_centroids, 3, 0.0);
  CHECK(results.empty());  // no signature on either side, nothing to score

  // A normal keyframe alongside it still behaves.
  const DescriptorSet normal = place_descriptors(6, 100, 42, 1);
  index.add(6, normal);
  const auto normal_results = index.query(normal, 3, 0.0);
  REQUIRE(!normal_results.empty());
  CHECK(normal_results[0].kf_id == 6);
}

TEST_CASE("accept_loop_edge: self-pair accepted, disjoint scenes rejected") {
  const SyntheticScene scene = make_scene(4);
  const auto poses = make_trajectory(TrajectoryKind::kOrbit, 8, 4);
  const PredictionPair self =
      predict_pair(scene, poses[0], poses[0], NoiseModel{}, 32, 48);
  const auto edge = accept_loop_edge(2, 5, self.X_i_in_i, self.X_j_in_i,
                                     self.F_i, self.F_j, 0.1);
  REQUIRE(edge.has_value());
  CHECK(edge->i == 2);
  CHECK(edge->j == 5);
  CHECK(edge->matches.valid_fraction() > 0.9);

  // Pointmaps from unrelated scenes (no consistent geometry): the 3D-distance
  // test wipes out the matches.
  const SyntheticScene other = make_scene(77);
  const PredictionPair a = predict_pair(scene, poses[0], poses[0], NoiseModel{}, 32, 48);
  const PredictionPair b = predict_pair(other, poses[4], poses[4], NoiseModel{}, 32, 48);
  const auto rejected = accept_loop_edge(0, 1, a.X_i_in_i, b.X_j_in_i, a.F_i,
                                         b.F_j, 0.1);
  CHECK(!rejected.has_value());
}

TEST_CASE("accept_loop_edge threshold uses >= semantics") {
  const SyntheticScene scene = make_scene(6);
  const auto poses = make_trajectory(TrajectoryKind::kOrbit, 30, 6);
  const PredictionPair pair =
      predict_pair(scene, poses[0], poses[2], NoiseModel{}, 32, 48);
  // Measure the pair's actual valid fraction with the threshold disabled...
  const auto open = accept_loop_edge(0, 1, pair.X_i_in_i, pair.X_j_in_i, pair.F_i,
                                     pair.F_j, 0.0);
  REQUIRE(open.has_value());
  const double fraction = open->matches.valid_fraction();
  REQUIRE(fraction > 0.0);
  // ...then demand exactly that fraction: >= accepts the boundary.
  const auto boundary = accept_loop_edge(0, 1, pair.X_i_in_i, pair.X_j_in_i,
                                         pair.F_i, pair.F_j, fraction);
  CHECK(boundary.has_value());
  // And strictly above it rejects.
  const auto above = accept_loop_edge(0, 1, pair.X_i_in_i, pair.X_j_in_i,
                                      pair.F_i, pair.F_j,
                                      fraction + 1e-12);
  CHECK(!above.has_value());
}
