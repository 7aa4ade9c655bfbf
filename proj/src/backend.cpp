#include "pmslam/backend.hpp"

#include <Eigen/SparseCholesky>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace pmslam {

const Keyframe* Graph::find(int id) const {
  for (const auto& kf : keyframes) {
    if (kf.id == id) return &kf;
  }
  return nullptr;
}

Keyframe* Graph::find(int id) {
  return const_cast<Keyframe*>(static_cast<const Graph*>(this)->find(id));
}

int Graph::index_of(int id) const {
  for (size_t k = 0; k < keyframes.size(); ++k) {
    if (keyframes[k].id == id) return static_cast<int>(k);
  }
  return -1;
}

namespace {

MatchSet swapped(const MatchSet& matches) {
  MatchSet out = matches;
  for (auto& m : out.matches) std::swap(m.pixel_a, m.pixel_b);
  return out;
}

double median_edge_confidence(const MatchSet& matches) {
  std::vector<double> q;
  for (const auto& m : matches.matches) {
    if (m.valid) q.push_back(m.confidence);
  }
  if (q.empty()) return 0.0;
  const size_t mid = q.size() / 2;
  std::nth_element(q.begin(), q.begin() + mid, q.end());
  return q[mid];
}

struct DirectedConstraint {
  int ref_index;
  int src_index;
  MatchSet matches;  // pixel_b indexes ref, pixel_a indexes src
  double q_min;
};

std::vector<DirectedConstraint> directed_constraints(const Graph& graph,
                                                     const BackendParams& params) {
  std::vector<DirectedConstraint> out;
  for (const auto& edge : graph.edges) {
    const int bi = graph.index_of(edge.i);
    const int bj = graph.index_of(edge.j);
    if (bi < 0 || bj < 0) continue;
    const double q_min =
        params.weights.q_min_fraction * median_edge_confidence(edge.matches);
    // Both directions of the bidirectional edge share the correspondences.
    out.push_back({bi, bj, swapped(edge.matches), q_min});
    out.push_back({bj, bi, edge.matches, q_min});
  }
  return out;
}

}  // namespace

void add_keyframe(Graph& graph, Keyframe kf, const MatchSet* matches_to_prev) {
  if (graph.keyframes.empty()) {
    graph.anchor_id = kf.id;
    graph.keyframes.push_back(std::move(kf));
    return;
  }
  if (matches_to_prev == nullptr) {
    throw std::invalid_argument(
        "add_keyframe: non-initial keyframe requires matches to predecessor");
  }
  Edge edge;
  edge.i = graph.keyframes.back().id;
  edge.j = kf.id;
  edge.matches = *matches_to_prev;
  graph.keyframes.push_back(std::move(kf));
  graph.edges.push_back(std::move(edge));
}

AssembledSystem assemble_system(const Graph& graph, const BackendParams& params) {
  const int n = static_cast<int>(graph.keyframes.size());
  const int dim = 7 * n;
  const int anchor = graph.index_of(graph.anchor_id);
  const PinholeIntrinsics* K =
      params.intrinsics ? &*params.intrinsics : nullptr;

  std::map<std::pair<int, int>, Mat7> blocks;
  Eigen::VectorXd gradient = Eigen::VectorXd::Zero(dim);
  auto accumulate = [&blocks](int r, int c, const Mat7& value) {
    auto [it, inserted] = blocks.try_emplace({r, c}, Mat7::Zero());
    it->second += value;
  };

  for (const auto& con : directed_constraints(graph, params)) {
    const Keyframe& ref = graph.keyframes[con.ref_index];
    const Keyframe& src = graph.keyframes[con.src_index];
    const Sim3Pose T_rel = relative_pose(ref.T_WC, src.T_WC);
    RobustWeightParams weights = params.weights;
    weights.q_min = con.q_min;

    const auto residuals = residual_blocks(T_rel, con.matches, ref.canonical,
                                           src.canonical, params.mode, weights, K);
    const Mat7 adj = ref.T_WC.inverse().adjoint();

    Mat7 H_rr = Mat7::Zero();
    Mat7 H_rs = Mat7::Zero();
    Mat7 H_ss = Mat7::Zero();
    Tangent7 g_ref = Tangent7::Zero();
    Tangent7 g_src = Tangent7::Zero();
    for (const auto& b : residuals) {
      if (!b.used) continue;
      for (int r = 0; r < 4; ++r) {
        const double w = b.weight(r);
        if (w <= 0.0) continue;
        const Eigen::Matrix<double, 1, 7> j_rel = b.jacobian.row(r);
        const Eigen::Matrix<double, 1, 7> j_ref = -j_rel * adj;
        const Eigen::Matrix<double, 1, 7> j_src = j_rel * adj;
        H_rr.noalias() += w * j_ref.transpose() * j_ref;
        H_rs.noalias() += w * j_ref.transpose() * j_src;
        H_ss.noalias() += w * j_src.transpose() * j_src;
        g_ref.noalias() += w * j_ref.transpose() * b.residual(r);
        g_src.noalias() += w * j_src.transpose() * b.residual(r);
      }
    }
    accumulate(con.ref_index, con.ref_index, H_rr);
    accumulate(con.ref_index, con.src_index, H_rs);
    accumulate(con.src_index, con.ref_index, H_rs.transpose());
    accumulate(con.src_index, con.src_index, H_ss);
    gradient.segment<7>(7 * con.ref_index) += g_ref;
    gradient.segment<7>(7 * con.src_index) += g_src;
  }

  // Gauge fixing: the anchor's 7 variables are eliminated.
  if (anchor >= 0) {
    for (auto it = blocks.begin(); it != blocks.end();) {
      if (it->first.first == anchor || it->first.second == anchor) {
        it = blocks.erase(it);
      } else {
        ++it;
      }
    }
    blocks[{anchor, anchor}] = Mat7::Identity();
    gradient.segment<7>(7 * anchor).setZero();
  }

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(blocks.size() * 49);
  for (const auto& [key, block] : blocks) {
    for (int r = 0; r < 7; ++r) {
      for (int c = 0; c < 7; ++c) {
        if (block(r, c) != 0.0) {
          triplets.emplace_back(7 * key.first + r, 7 * key.second + c, block(r, c));
        }
      }
    }
  }
  AssembledSystem sys;
  sys.hessian.resize(dim, dim);
  sys.hessian.setFromTriplets(triplets.begin(), triplets.end());
  sys.gradient = std::move(gradient);
  return sys;
}

double backend_cost(const Graph& graph, const BackendParams& params) {
  const PinholeIntrinsics* K =
      params.intrinsics ? &*params.intrinsics : nullptr;
  double cost = 0.0;
  for (const auto& con : directed_constraints(graph, params)) {
    const Keyframe& ref = graph.keyframes[con.ref_index];
    const Keyframe& src = graph.keyframes[con.src_index];
    const Sim3Pose T_rel = relative_pose(ref.T_WC, src.T_WC);
    RobustWeightParams weights = params.weights;
    weights.q_min = con.q_min;
    const auto residuals = residual_blocks(T_rel, con.matches, ref.canonical,
                                           src.canonical, params.mode, weights, K);
    cost += block_cost(residuals, weights, params.mode);
  }
  return cost;
}

OptimizeResult global_optimize(Graph& graph, const BackendParams& params) {
  OptimizeResult result;
  const int n = static_cast<int>(graph.keyframes.size());
  if (n < 2 || graph.edges.empty()) {
    result.converged = true;
    return result;
  }
  const int anchor = graph.index_of(graph.anchor_id);

  double cost = backend_cost(graph, params);
  result.cost_trace.push_back(cost);

  for (int iter = 0; iter < params.max_iterations; ++iter) {
    ++result.iterations;
    AssembledSystem sys = assemble_system(graph, params);

    Eigen::VectorXd tau;
    bool solved = false;
    double lambda = 0.0;
    for (int attempt = 0; attempt <= params.damping_retries; ++attempt) {
      Eigen::SparseMatrix<double> H = sys.hessian;
      if (lambda > 0.0) {
        for (int k = 0; k < H.rows(); ++k) H.coeffRef(k, k) += lambda;
      }
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(H);
      if (solver.info() == Eigen::Success) {
        tau = solver.solve(-sys.gradient);
        // Overflowing steps (near-singular system) get the damping treatment.
        if (solver.info() == Eigen::Success && tau.allFinite() &&
            tau.lpNorm<Eigen::Infinity>() < 1e3) {
          solved = true;
          break;
        }
      }
      lambda = lambda == 0.0 ? params.damping_init : lambda * 10.0;
    }
    if (!solved) {
      return result;  // graph state intact, non-convergence reported
    }

    std::vector<Sim3Pose> previous;
    previous.reserve(n);
    for (const auto& kf : graph.keyframes) previous.push_back(kf.T_WC);
    for (int k = 0; k < n; ++k) {
      if (k == anchor) continue;  // anchor pose bit-identical
      graph.keyframes[k].T_WC =
          graph.keyframes[k].T_WC.retract(tau.segment<7>(7 * k));
    }

    const double cost_new = backend_cost(graph, params);
    if (cost_new > cost * (1.0 + 1e-12) + 1e-300) {
      for (int k = 0; k < n; ++k) graph.keyframes[k].T_WC = previous[k];
      result.converged = true;
      return result;
    }
    cost = cost_new;
    result.cost_trace.push_back(cost);
    if (tau.norm() < params.update_tol) {
      result.converged = true;
      return result;
    }
  }
  result.converged = true;
  return result;
}

// ---------------------------------------------------------------------------
// Snapshot serialization, magic "PGSLAM01", little-endian.

namespace {

constexpr char kMagic[8] = {'P', 'G', 'S', 'L', 'A', 'M', '0', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  return value;
}

void write_pose(std::ostream& os, const Sim3Pose& pose) {
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) write_pod(os, pose.rotation()(r, c));
  for (int a = 0; a < 3; ++a) write_pod(os, pose.translation()(a));
  write_pod(os, pose.scale());
}

Sim3Pose read_pose(std::istream& is) {
  Mat3 R;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) R(r, c) = read_pod<double>(is);
  Vec3 t;
  for (int a = 0; a < 3; ++a) t(a) = read_pod<double>(is);
  const double s = read_pod<double>(is);
  return Sim3Pose(R, t, s);
}

}  // namespace

void save_graph(const Graph& graph, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_graph: cannot open " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod<int32_t>(os, static_cast<int32_t>(graph.keyframes.size()));
  write_pod<int32_t>(os, static_cast<int32_t>(graph.edges.size()));
  write_pod<int32_t>(os, graph.anchor_id);

  for (const auto& kf : graph.keyframes) {
    write_pod<int32_t>(os, kf.id);
    write_pod<int32_t>(os, kf.frame_id);
    write_pod<int32_t>(os, kf.canonical.height);
    write_pod<int32_t>(os, kf.canonical.width);
    write_pod<int32_t>(os, kf.features.dim);
    write_pose(os, kf.T_WC);
    const int n = kf.canonical.size();
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a) write_pod(os, kf.canonical.points[i](a));
    os.write(reinterpret_cast<const char*>(kf.canonical.valid.data()), n);
    for (int i = 0; i < n; ++i) write_pod(os, kf.canonical_confidence.values[i]);
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < kf.features.dim; ++d)
        write_pod(os, kf.features.descriptors(d, i));
    for (int i = 0; i < n; ++i) write_pod(os, kf.features.match_confidence[i]);
    write_pod<int32_t>(os, static_cast<int32_t>(kf.retrieval_signature.rows()));
    write_pod<int32_t>(os, static_cast<int32_t>(kf.retrieval_signature.cols()));
    for (Eigen::Index c = 0; c < kf.retrieval_signature.cols(); ++c)
      for (Eigen::Index r = 0; r < kf.retrieval_signature.rows(); ++r)
        write_pod(os, kf.retrieval_signature(r, c));
  }

  for (const auto& edge : graph.edges) {
    write_pod<int32_t>(os, edge.i);
    write_pod<int32_t>(os, edge.j);
    write_pod<int32_t>(os, static_cast<int32_t>(edge.matches.matches.size()));
    for (const auto& m : edge.matches.matches) {
      write_pod<int32_t>(os, m.pixel_a);
      write_pod<int32_t>(os, m.pixel_b);
      write_pod(os, m.confidence);
      write_pod<uint8_t>(os, m.valid ? 1 : 0);
    }
  }
  if (!os) throw std::runtime_error("save_graph: write failed for " + path);
}

Graph load_graph(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_graph: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("load_graph: bad magic in " + path);
  }
  Graph graph;
  const int n_keyframes = read_pod<int32_t>(is);
  const int n_edges = read_pod<int32_t>(is);
  graph.anchor_id = read_pod<int32_t>(is);

  for (int k = 0; k < n_keyframes; ++k) {
    Keyframe kf;
    kf.id = read_pod<int32_t>(is);
    kf.frame_id = read_pod<int32_t>(is);
    const int h = read_pod<int32_t>(is);
    const int w = read_pod<int32_t>(is);
    const int dim = read_pod<int32_t>(is);
    kf.T_WC = read_pose(is);
    kf.canonical = Pointmap(h, w);
    kf.canonical_confidence = ConfidenceMap(h, w);
    kf.features = FeatureMap(h, w, dim);
    const int n = h * w;
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a) kf.canonical.points[i](a) = read_pod<double>(is);
    is.read(reinterpret_cast<char*>(kf.canonical.valid.data()), n);
    for (int i = 0; i < n; ++i)
      kf.canonical_confidence.values[i] = read_pod<double>(is);
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < dim; ++d)
        kf.features.descriptors(d, i) = read_pod<double>(is);
    for (int i = 0; i < n; ++i)
      kf.features.match_confidence[i] = read_pod<double>(is);
    const int sig_rows = read_pod<int32_t>(is);
    const int sig_cols = read_pod<int32_t>(is);
    kf.retrieval_signature.resize(sig_rows, sig_cols);
    for (int c = 0; c < sig_cols; ++c)
      for (int r = 0; r < sig_rows; ++r)
        kf.retrieval_signature(r, c) = read_pod<double>(is);
    graph.keyframes.push_back(std::move(kf));
  }

  for (int k = 0; k < n_edges; ++k) {
    Edge edge;
    edge.i = read_pod<int32_t>(is);
    edge.j = read_pod<int32_t>(is);
    const int n_matches = read_pod<int32_t>(is);
    edge.matches.matches.resize(n_matches);
    for (auto& m : edge.matches.matches) {
      m.pixel_a = read_pod<int32_t>(is);
      m.pixel_b = read_pod<int32_t>(is);
      m.confidence = read_pod<double>(is);
      m.valid = read_pod<uint8_t>(is) != 0;
    }
    graph.edges.push_back(std::move(edge));
  }
  if (!is) throw std::runtime_error("load_graph: truncated file " + path);
  return graph;
}

}  // namespace pmslam
