#include "pcreid/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pcreid/knn.hpp"

namespace pcreid {

Aabb Aabb::of(const PointCloud& cloud) {
  if (cloud.empty()) throw std::invalid_argument("Aabb::of: empty cloud");
  Aabb box;
  box.min = cloud.points.colwise().minCoeff().transpose();
  box.max = cloud.points.colwise().maxCoeff().transpose();
  return box;
}

bool Aabb::encloses(const PointCloud& cloud, double tol) const {
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      double v = cloud.points(i, c);
      if (v < min[c] - tol || v > max[c] + tol) return false;
    }
  }
  return true;
}

Aabb Aabb::merged(const Aabb& other) const {
  Aabb out;
  out.min = min.cwiseMin(other.min);
  out.max = max.cwiseMax(other.max);
  return out;
}

PointCloud normalize_to_box_center(const PointCloud& cloud, const Aabb& box,
                                   double tol) {
  if (cloud.empty())
    throw std::invalid_argument("normalize_to_box_center: empty cloud");
  if (!box.encloses(cloud, tol))
    throw std::invalid_argument(
        "normalize_to_box_center: box does not enclose cloud");
  PointCloud out;
  out.points = cloud.points.rowwise() - box.center().transpose();
  return out;
}

namespace {

PointCloud resample_random(const PointCloud& cloud, Eigen::Index n, Rng& rng) {
  const Eigen::Index m = cloud.size();
  PointCloud out;
  out.points.resize(n, 3);
  if (m > n) {
    // Partial Fisher-Yates: the first n slots of a shuffled index array.
    std::vector<Eigen::Index> idx(m);
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index j =
          i + static_cast<Eigen::Index>(uniform_index(rng, m - i));
      std::swap(idx[i], idx[j]);
      out.points.row(i) = cloud.points.row(idx[i]);
    }
  } else {
    out.points.topRows(m) = cloud.points;
    for (Eigen::Index i = m; i < n; ++i)
      out.points.row(i) =
          cloud.points.row(static_cast<Eigen::Index>(uniform_index(rng, m)));
  }
  return out;
}

PointCloud resample_fps(const PointCloud& cloud, Eigen::Index n, Rng& rng) {
  const Eigen::Index m = cloud.size();
  if (m <= n) return resample_random(cloud, n, rng);
  PointCloud out;
  out.points.resize(n, 3);
  std::vector<double> best(m, std::numeric_limits<double>::infinity());
  Eigen::Index cur = static_cast<Eigen::Index>(uniform_index(rng, m));
  for (Eigen::Index i = 0; i < n; ++i) {
    out.points.row(i) = cloud.points.row(cur);
    Eigen::Index next = 0;
    double far = -1.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      double d = (cloud.points.row(j) - cloud.points.row(cur)).squaredNorm();
      best[j] = std::min(best[j], d);
      if (best[j] > far) {
        far = best[j];
        next = j;
      }
    }
    cur = next;
  }
  return out;
}

}  // namespace

PointCloud resample(const PointCloud& cloud, Eigen::Index n, Rng& rng,
                    ResampleMethod method) {
  if (cloud.empty()) throw std::invalid_argument("resample: empty cloud");
  if (n < 1) throw std::invalid_argument("resample: n must be >= 1");
  if (cloud.size() == n) return cloud;
  return method == ResampleMethod::kFarthestPoint
             ? resample_fps(cloud, n, rng)
             : resample_random(cloud, n, rng);
}

NeighborGraph knn_points(const PointCloud& cloud, int k, bool include_self) {
  return knn_rows(cloud.points, k, include_self);
}

double chamfer_distance(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("chamfer_distance: empty cloud");
  auto directional = [](const PointCloud& from, const PointCloud& to) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < from.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < to.size(); ++j) {
        double d2 = (from.points.row(i) - to.points.row(j)).squaredNorm();
        best = std::min(best, d2);
      }
      sum += std::sqrt(best);
    }
    return sum / static_cast<double>(from.size());
  };
  return directional(a, b) + directional(b, a);
}

}  // namespace pcreid
