#include "pmslam/eval.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace pmslam {

namespace {

std::vector<std::pair<int, int>> associate(const Trajectory& est,
                                           const Trajectory& ref,
                                           double window) {
  std::vector<std::pair<int, int>> pairs;
  int j = 0;
  for (int i = 0; i < static_cast<int>(est.poses.size()); ++i) {
    const double t = est.poses[i].timestamp;
    while (j + 1 < static_cast<int>(ref.poses.size()) &&
           std::abs(ref.poses[j + 1].timestamp - t) <=
               std::abs(ref.poses[j].timestamp - t)) {
      ++j;
    }
    if (!ref.poses.empty() && std::abs(ref.poses[j].timestamp - t) <= window) {
      pairs.emplace_back(i, j);
    }
  }
  return pairs;
}

}  // namespace

Sim3Pose align_sim3(const Trajectory& est, const Trajectory& ref,
                    const AlignParams& params) {
  const auto pairs = associate(est, ref, params.association_window);
  if (pairs.size() < 3) {
    throw std::runtime_error("align_sim3: fewer than 3 associated poses");
  }
  Eigen::MatrixXd src(3, pairs.size());
  Eigen::MatrixXd dst(3, pairs.size());
  for (size_t k = 0; k < pairs.size(); ++k) {
    src.col(k) = est.poses[pairs[k].first].pose.translation();
    dst.col(k) = ref.poses[pairs[k].second].pose.translation();
  }
  for (const Eigen::MatrixXd* cloud : {&src, &dst}) {
    const Eigen::MatrixXd centered = cloud->colwise() - cloud->rowwise().mean();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
    const auto& sv = svd.singularValues();
    if (sv(1) < 1e-9 * std::max(sv(0), 1.0)) {
      throw std::runtime_error(
          "align_sim3: collinear trajectory, alignment degenerate");
    }
  }
  const Eigen::Matrix4d T = Eigen::umeyama(src, dst, true);
  const Mat3 M = T.topLeftCorner<3, 3>();
  const double s = std::cbrt(M.determinant());
  return Sim3Pose(M / s, T.topRightCorner<3, 1>(), s);
}

double ate_rmse(const Trajectory& est, const Trajectory& ref,
                const AlignParams& params) {
  const Sim3Pose alignment = align_sim3(est, ref, params);
  const auto pairs = associate(est, ref, params.association_window);
  double sum_sq = 0.0;
  for (const auto& [i, j] : pairs) {
    const Vec3 aligned = alignment * est.poses[i].pose.translation();
    sum_sq += (aligned - ref.poses[j].pose.translation()).squaredNorm();
  }
  return std::sqrt(sum_sq / pairs.size());
}

namespace {

struct CellKey {
  int64_t x, y, z;
  bool operator==(const CellKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct CellHash {
  size_t operator()(const CellKey& k) const {
    return static_cast<size_t>(k.x * 73856093LL ^ k.y * 19349663LL ^
                               k.z * 83492791LL);
  }
};

class GridIndex {
 public:
  GridIndex(const std::vector<Vec3>& points, double cell)
      : points_(points), cell_(cell) {
    for (size_t i = 0; i < points.size(); ++i) {
      cells_[key(points[i])].push_back(static_cast<int>(i));
    }
  }

  // Distance to the nearest point, clamped at cell_ (points farther than one
  // cell radius in any neighbor cell cannot be closer).
  double clamped_nearest(const Vec3& q) const {
    const CellKey c = key(q);
    double best_sq = cell_ * cell_;
    for (int64_t dx = -1; dx <= 1; ++dx) {
      for (int64_t dy = -1; dy <= 1; ++dy) {
        for (int64_t dz = -1; dz <= 1; ++dz) {
          const auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == cells_.end()) continue;
          for (const int i : it->second) {
            best_sq = std::min(best_sq, (points_[i] - q).squaredNorm());
          }
        }
      }
    }
    return std::sqrt(best_sq);
  }

 private:
  CellKey key(const Vec3& p) const {
    return {static_cast<int64_t>(std::floor(p.x() / cell_)),
            static_cast<int64_t>(std::floor(p.y() / cell_)),
            static_cast<int64_t>(std::floor(p.z() / cell_))};
  }

  const std::vector<Vec3>& points_;
  double cell_;
  std::unordered_map<CellKey, std::vector<int>, CellHash> cells_;
};

double clamped_rmse(const std::vector<Vec3>& from, const std::vector<Vec3>& to,
                    double max_dist) {
  GridIndex index(to, max_dist);
  double sum_sq = 0.0;
  for (const auto& p : from) {
    const double d = index.clamped_nearest(p);
    sum_sq += d * d;
  }
  return std::sqrt(sum_sq / from.size());
}

}  // namespace

PointCloudMetrics cloud_metrics(const std::vector<Vec3>& est_cloud,
                                const std::vector<Vec3>& ref_cloud,
                                double max_dist) {
  if (est_cloud.empty() || ref_cloud.empty()) {
    throw std::invalid_argument("cloud_metrics: empty cloud");
  }
  PointCloudMetrics m;
  m.accuracy = clamped_rmse(est_cloud, ref_cloud, max_dist);
  m.completion = clamped_rmse(ref_cloud, est_cloud, max_dist);
  m.chamfer = 0.5 * (m.accuracy + m.completion);
  return m;
}

Trajectory read_tum_trajectory(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_tum_trajectory: cannot open " + path);
  Trajectory trajectory;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) continue;
    Eigen::Quaterniond q(qw, qx, qy, qz);
    q.normalize();
    trajectory.poses.push_back(
        {t, Sim3Pose(q.toRotationMatrix(), Vec3(tx, ty, tz), 1.0)});
  }
  return trajectory;
}

void write_tum_trajectory(const Trajectory& trajectory, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_tum_trajectory: cannot open " + path);
  os << "# timestamp tx ty tz qx qy qz qw\n";
  char buf[256];
  for (const auto& tp : trajectory.poses) {
    const Eigen::Quaterniond q(tp.pose.rotation());
    const Vec3& t = tp.pose.translation();
    std::snprintf(buf, sizeof(buf),
                  "%.6f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", tp.timestamp,
                  t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w());
    os << buf;
  }
  if (!os) throw std::runtime_error("write_tum_trajectory: write failed");
}

std::vector<Vec3> read_ply(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_ply: cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line.rfind("ply", 0) != 0) {
    throw std::runtime_error("read_ply: not a PLY file: " + path);
  }
  bool binary = false;
  size_t count = 0;
  int extra_uchar = 0;
  bool in_vertex = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "format") {
      std::string fmt;
      ss >> fmt;
      binary = fmt == "binary_little_endian";
    } else if (tok == "element") {
      std::string name;
      ss >> name >> count;
      in_vertex = name == "vertex";
    } else if (tok == "property" && in_vertex) {
      std::string type, name;
      ss >> type >> name;
      if (type == "uchar" || type == "uint8") ++extra_uchar;
    } else if (tok == "end_header") {
      break;
    }
  }
  std::vector<Vec3> points;
  points.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    float xyz[3];
    if (binary) {
      is.read(reinterpret_cast<char*>(xyz), sizeof(xyz));
      is.ignore(extra_uchar);
    } else {
      if (!std::getline(is, line)) break;
      std::istringstream ss(line);
      ss >> xyz[0] >> xyz[1] >> xyz[2];
    }
    if (!is) break;
    points.emplace_back(xyz[0], xyz[1], xyz[2]);
  }
  return points;
}

void write_ply(const std::vector<Vec3>& points, const std::string& path,
               bool binary) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_ply: cannot open " + path);
  os << "ply\nformat " << (binary ? "binary_little_endian" : "ascii")
     << " 1.0\nelement vertex " << points.size()
     << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  if (binary) {
    for (const auto& p : points) {
      const float xyz[3] = {static_cast<float>(p.x()), static_cast<float>(p.y()),
                            static_cast<float>(p.z())};
      os.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    }
  } else {
    char buf[128];
    for (const auto& p : points) {
      std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f\n", p.x(), p.y(), p.z());
      os << buf;
    }
  }
  if (!os) throw std::runtime_error("write_ply: write failed for " + path);
}

}  // namespace pmslam
