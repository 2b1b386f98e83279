#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "pcreid/rng.hpp"

namespace pcreid {

using Vec3 = Eigen::Vector3d;
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

// An unordered set of 3-D points in meters.
struct PointCloud {
  PointMatrix points;

  PointCloud() = default;
  explicit PointCloud(PointMatrix pts) : points(std::move(pts)) {}

  Eigen::Index size() const { return points.rows(); }
  bool empty() const { return points.rows() == 0; }
  Vec3 point(Eigen::Index i) const { return points.row(i).transpose(); }
};

// Axis-aligned bounding box, min <= max component-wise.
struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  static Aabb of(const PointCloud& cloud);

  Vec3 center() const { return 0.5 * (min + max); }
  bool encloses(const PointCloud& cloud, double tol = 1e-6) const;
  Aabb merged(const Aabb& other) const;
};

// Per-point neighbor lists, each sorted by ascending distance with ties
// broken by ascending index. When include_self is set, each point appears
// in its own list even if exact duplicates would otherwise crowd it out.
struct NeighborGraph {
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> indices;
  bool include_self = false;

  Eigen::Index size() const { return indices.rows(); }
  int k() const { return static_cast<int>(indices.cols()); }
};

enum class ResampleMethod { kRandom, kFarthestPoint };

// Translates the cloud by -center(box). The box must enclose the cloud
// within `tol` meters.
PointCloud normalize_to_box_center(const PointCloud& cloud, const Aabb& box,
                                   double tol = 1e-6);

// Returns exactly n points. N > n draws a uniform subset without
// replacement; N < n keeps every point and appends uniformly drawn
// duplicates; N == n returns the input unchanged.
PointCloud resample(const PointCloud& cloud, Eigen::Index n, Rng& rng,
                    ResampleMethod method = ResampleMethod::kRandom);

NeighborGraph knn_points(const PointCloud& cloud, int k, bool include_self);

// Symmetric averaged nearest-neighbor distance with non-squared norms:
//   (1/|a|) sum_p min_q |p-q|  +  (1/|b|) sum_q min_p |q-p|
double chamfer_distance(const PointCloud& a, const PointCloud& b);

}  // namespace pcreid
