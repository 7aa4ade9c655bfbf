// Keyframe graph state and second-order global optimization of all Sim(3)
// poses over ray (uncalibrated) or pixel (calibrated) errors, with gauge
// fixing and sparse Cholesky.

#pragma once

#include <Eigen/SparseCore>
#include <optional>
#include <string>
#include <vector>

#include "pmslam/tracking.hpp"

namespace pmslam {

// Bidirectional constraint between keyframes i and j. Each stored match is a
// pixel correspondence (pixel_a in i, pixel_b in j) used in both directions.
struct Edge {
  int i = -1;
  int j = -1;
  MatchSet matches;
};

struct Graph {
  std::vector<Keyframe> keyframes;
  std::vector<Edge> edges;
  int anchor_id = -1;  // gauge anchor, fixed by the optimizer

  const Keyframe* find(int id) const;
  Keyframe* find(int id);
  int index_of(int id) const;
};

/// Appends a keyframe; non-initial keyframes get a bidirectional edge to the
/// predecessor carrying the tracking match set (pixel_a in the predecessor).
void add_keyframe(Graph& graph, Keyframe kf, const MatchSet* matches_to_prev);

struct BackendParams {
  RobustWeightParams weights;
  TrackMode mode = TrackMode::kRay;
  std::optional<PinholeIntrinsics> intrinsics;
  int max_iterations = 10;
  double update_tol = 1e-6;
  double damping_init = 1e-6;
  int damping_retries = 3;
};

struct AssembledSystem {
  Eigen::SparseMatrix<double> hessian;  // 7N x 7N, symmetric
  Eigen::VectorXd gradient;             // 7N
};

/// Gauss-Newton normal equations over all edges, both directions. Jacobians
/// w.r.t. the global poses come from the relative-pose Jacobians via the
/// adjoint of T_wi^-1. Anchor rows/columns are replaced by identity and a
/// zero gradient.
AssembledSystem assemble_system(const Graph& graph, const BackendParams& params);

struct OptimizeResult {
  int iterations = 0;
  std::vector<double> cost_trace;
  bool converged = false;
};

/// Gauss-Newton with left-plus updates to all non-anchor poses, IRLS
/// reweighting per iteration, at most 10 iterations. Cholesky failure is
/// retried with increasing damping; persistent failure leaves the graph
/// intact and reports non-convergence.
OptimizeResult global_optimize(Graph& graph, const BackendParams& params);

/// Total robust backend cost at the current poses.
double backend_cost(const Graph& graph, const BackendParams& params);

// Versioned binary snapshot, magic "PGSLAM01", little-endian.
void save_graph(const Graph& graph, const std::string& path);
Graph load_graph(const std::string& path);

}  // namespace pmslam
