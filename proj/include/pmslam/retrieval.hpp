// Incremental ASMK-style image retrieval over per-keyframe feature sets for
// loop-closure candidate generation, plus loop-edge acceptance.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pmslam/backend.hpp"
#include "pmslam/camera.hpp"

namespace pmslam {

// Columns are descriptors.
using DescriptorSet = Eigen::MatrixXd;

struct Codebook {
  Eigen::MatrixXd centroids;  // dim x count

  int dim() const { return static_cast<int>(centroids.rows()); }
  int count() const { return static_cast<int>(centroids.cols()); }
};

/// Lloyd's k-means over a training descriptor sample.
Codebook build_codebook(const DescriptorSet& training, int count, uint64_t seed,
                        int iterations = 20);

// Versioned binary file, magic "ASMKCB01", float32 little-endian centroids.
void save_codebook(const Codebook& codebook, const std::string& path);
Codebook load_codebook(const std::string& path);

/// Nearest centroid per descriptor by dense L2 evaluation; ties break to the
/// lowest word id.
std::vector<int> quantize(const DescriptorSet& features, const Codebook& codebook);

struct RetrievalParams {
  double alpha = 3.0;  // selective function exponent
  int max_descriptors_per_keyframe = 1024;
};

struct QueryResult {
  int kf_id = -1;
  double score = 0.0;
};

class RetrievalIndex {
 public:
  explicit RetrievalIndex(Codebook codebook, RetrievalParams params = {})
      : codebook_(std::move(codebook)), params_(params) {}

  /// Aggregates per-word binarized residuals and appends to the inverted
  /// lists. Duplicate keyframe ids are rejected.
  void add(int kf_id, const DescriptorSet& features);

  /// ASMK similarity against all indexed keyframes, symmetric-normalized so a
  /// self-query scores 1. Returns top-K with score >= omega_r, excluding
  /// exclude_kf_id (the immediately preceding keyframe).
  std::vector<QueryResult> query(const DescriptorSet& features, int top_k,
                                 double omega_r, int exclude_kf_id = -1) const;

  int size() const { return static_cast<int>(indexed_ids_.size()); }
  bool contains(int kf_id) const;
  const Codebook& codebook() const { return codebook_; }

 private:
  struct WordSignature {
    int word = -1;
    Eigen::VectorXf binarized;  // +-1 entries
  };

  std::vector<WordSignature> encode(const DescriptorSet& features) const;

  Codebook codebook_;
  RetrievalParams params_;
  struct InvertedEntry {
    int kf_id;
    Eigen::VectorXf binarized;
  };
  std::vector<std::vector<InvertedEntry>> inverted_;  // per word
  std::vector<int> indexed_ids_;
  std::vector<int> word_counts_;  // self-similarity norm cache, by insert order
};

/// Matches the candidate pair's pointmaps and emits a bidirectional edge iff
/// the valid-match fraction reaches omega_l. Match pixels: pixel_a in i,
/// pixel_b in j.
std::optional<Edge> accept_loop_edge(int kf_i, int kf_j, const Pointmap& X_i_i,
                                     const Pointmap& X_j_in_i,
                                     const FeatureMap& F_i, const FeatureMap& F_j,
                                     double omega_l,
                                     const MatchParams& match_params = {},
                                     const RefineParams& refine_params = {});

}  // namespace pmslam
