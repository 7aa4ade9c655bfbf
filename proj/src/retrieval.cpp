#include "pmslam/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>

namespace pmslam {

Codebook build_codebook(const DescriptorSet& training, int count, uint64_t seed,
                        int iterations) {
  const int n = static_cast<int>(training.cols());
  if (n == 0 || count <= 0) {
    throw std::invalid_argument("build_codebook: empty training set");
  }
  count = std::min(count, n);
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + 17);

  // Initialize with a random sample of distinct training descriptors.
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  Codebook cb;
  cb.centroids.resize(training.rows(), count);
  for (int k = 0; k < count; ++k) cb.centroids.col(k) = training.col(order[k]);

  std::vector<int> assignment(n, 0);
  for (int iter = 0; iter < iterations; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_dist = (training.col(i) - cb.centroids.col(0)).squaredNorm();
      for (int k = 1; k < count; ++k) {
        const double dist = (training.col(i) - cb.centroids.col(k)).squaredNorm();
        if (dist < best_dist) {
          best_dist = dist;
          best = k;
        }
      }
      if (assignment[i] != best) {
        assignment[i] = best;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(training.rows(), count);
    std::vector<int> counts(count, 0);
    for (int i = 0; i < n; ++i) {
      sums.col(assignment[i]) += training.col(i);
      ++counts[assignment[i]];
    }
    for (int k = 0; k < count; ++k) {
      if (counts[k] > 0) cb.centroids.col(k) = sums.col(k) / counts[k];
    }
  }
  return cb;
}

namespace {
constexpr char kCodebookMagic[8] = {'A', 'S', 'M', 'K', 'C', 'B', '0', '1'};
}

void save_codebook(const Codebook& codebook, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_codebook: cannot open " + path);
  os.write(kCodebookMagic, sizeof(kCodebookMagic));
  const int32_t dim = codebook.dim();
  const int32_t count = codebook.count();
  os.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
  os.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (int k = 0; k < count; ++k) {
    for (int d = 0; d < dim; ++d) {
      const float v = static_cast<float>(codebook.centroids(d, k));
      os.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
  if (!os) throw std::runtime_error("save_codebook: write failed for " + path);
}

Codebook load_codebook(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_codebook: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCodebookMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("load_codebook: bad magic in " + path);
  }
  int32_t dim = 0;
  int32_t count = 0;
  is.read(reinterpret_cast<char*>(&dim), sizeof(dim));
  is.read(reinterpret_cast<char*>(&count), sizeof(count));
  Codebook cb;
  cb.centroids.resize(dim, count);
  for (int k = 0; k < count; ++k) {
    for (int d = 0; d < dim; ++d) {
      float v = 0.0f;
      is.read(reinterpret_cast<char*>(&v), sizeof(v));
      cb.centroids(d, k) = v;
    }
  }
  if (!is) throw std::runtime_error("load_codebook: truncated file " + path);
  return cb;
}

std::vector<int> quantize(const DescriptorSet& features, const Codebook& codebook) {
  const int n = static_cast<int>(features.cols());
  std::vector<int> words(n, 0);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double best_dist = (features.col(i) - codebook.centroids.col(0)).squaredNorm();
    for (int k = 1; k < codebook.count(); ++k) {
      const double dist = (features.col(i) - codebook.centroids.col(k)).squaredNorm();
      if (dist < best_dist) {  // strict: equidistant ties keep the lowest id
        best_dist = dist;
        best = k;
      }
    }
    words[i] = best;
  }
  return words;
}

std::vector<RetrievalIndex::WordSignature> RetrievalIndex::encode(
    const DescriptorSet& features) const {
  DescriptorSet sample = features;
  if (sample.cols() > params_.max_descriptors_per_keyframe) {
    // Deterministic stride subsample.
    const int n = static_cast<int>(sample.cols());
    const int target = params_.max_descriptors_per_keyframe;
    DescriptorSet reduced(sample.rows(), target);
    for (int i = 0; i < target; ++i) {
      reduced.col(i) = sample.col(static_cast<int>(
          static_cast<int64_t>(i) * n / target));
    }
    sample = std::move(reduced);
  }

  const std::vector<int> words = quantize(sample, codebook_);
  std::map<int, Eigen::VectorXd> aggregated;
  for (int i = 0; i < static_cast<int>(words.size()); ++i) {
    const Eigen::VectorXd residual =
        sample.col(i) - codebook_.centroids.col(words[i]);
    auto [it, inserted] = aggregated.try_emplace(
        words[i], Eigen::VectorXd::Zero(codebook_.dim()));
    it->second += residual;
  }

  std::vector<WordSignature> out;
  out.reserve(aggregated.size());
  for (const auto& [word, residual] : aggregated) {
    const double norm = residual.norm();
    if (norm < 1e-12) continue;  // zero residual carries no signature
    WordSignature sig;
    sig.word = word;
    sig.binarized.resize(codebook_.dim());
    for (int d = 0; d < codebook_.dim(); ++d) {
      sig.binarized(d) = residual(d) >= 0.0 ? 1.0f : -1.0f;
    }
    out.push_back(std::move(sig));
  }
  return out;
}

bool RetrievalIndex::contains(int kf_id) const {
  return std::find(indexed_ids_.begin(), indexed_ids_.end(), kf_id) !=
         indexed_ids_.end();
}

void RetrievalIndex::add(int kf_id, const DescriptorSet& features) {
  if (contains(kf_id)) {
    throw std::invalid_argument("RetrievalIndex::add: duplicate keyframe id");
  }
  const auto signatures = encode(features);
  if (inverted_.size() < static_cast<size_t>(codebook_.count())) {
    inverted_.resize(codebook_.count());
  }
  for (const auto& sig : signatures) {
    inverted_[sig.word].push_back({kf_id, sig.binarized});
  }
  indexed_ids_.push_back(kf_id);
  word_counts_.push_back(static_cast<int>(signatures.size()));
}

std::vector<QueryResult> RetrievalIndex::query(const DescriptorSet& features,
                                               int top_k, double omega_r,
                                               int exclude_kf_id) const {
  std::vector<QueryResult> out;
  if (indexed_ids_.empty()) return out;
  const auto signatures = encode(features);
  if (signatures.empty()) return out;

  std::map<int, double> scores;
  const double dim = static_cast<double>(codebook_.dim());
  for (const auto& sig : signatures) {
    if (sig.word >= static_cast<int>(inverted_.size())) continue;
    for (const auto& entry : inverted_[sig.word]) {
      const double u =
          static_cast<double>(sig.binarized.dot(entry.binarized)) / dim;
      const double contribution =
          (u >= 0.0 ? 1.0 : -1.0) * std::pow(std::abs(u), params_.alpha);
      scores[entry.kf_id] += contribution;
    }
  }

  const double query_norm = std::sqrt(static_cast<double>(signatures.size()));
  for (size_t k = 0; k < indexed_ids_.size(); ++k) {
    const int id = indexed_ids_[k];
    if (id == exclude_kf_id) continue;
    const auto it = scores.find(id);
    if (it == scores.end()) continue;
    const double norm = query_norm * std::sqrt(std::max(1, word_counts_[k]));
    const double score = it->second / norm;
    if (score >= omega_r) out.push_back({id, score});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.kf_id < b.kf_id;
  });
  if (static_cast<int>(out.size()) > top_k) out.resize(top_k);
  return out;
}

std::optional<Edge> accept_loop_edge(int kf_i, int kf_j, const Pointmap& X_i_i,
                                     const Pointmap& X_j_in_i,
                                     const FeatureMap& F_i, const FeatureMap& F_j,
                                     double omega_l,
                                     const MatchParams& match_params,
                                     const RefineParams& refine_params) {
  MatchSet matches =
      match_pointmaps(X_i_i, X_j_in_i, F_i, F_j, nullptr, match_params);
  matches = feature_refine(matches, F_i, F_j, refine_params);
  // Loop candidates must agree in appearance, not just scale-compatible
  // geometry: a match only counts when the descriptors of its two endpoints
  // align (unit-norm descriptors, inner product threshold).
  constexpr double kMinDescriptorAgreement = 0.5;
  for (auto& m : matches.matches) {
    if (!m.valid) continue;
    const double dot =
        F_i.descriptors.col(m.pixel_a).dot(F_j.descriptors.col(m.pixel_b));
    if (dot < kMinDescriptorAgreement) m.valid = false;
  }
  if (matches.valid_fraction() < omega_l) return std::nullopt;
  Edge edge;
  edge.i = kf_i;
  edge.j = kf_j;
  edge.matches = std::move(matches);
  return edge;
}

}  // namespace pmslam
