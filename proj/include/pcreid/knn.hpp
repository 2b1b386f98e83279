#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <stdexcept>
#include <vector>

#include "pcreid/geometry.hpp"

namespace pcreid {

// KNN over the rows of a feature matrix, Euclidean metric. Lists are sorted
// by (distance, index); with include_self the own index is always part of
// the selection. Deterministic for identical inputs.
template <typename Derived>
NeighborGraph knn_rows(const Eigen::MatrixBase<Derived>& rows, int k,
                       bool include_self) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = rows.rows();
  if (n == 0) throw std::invalid_argument("knn: empty input");
  const Eigen::Index limit = include_self ? n : n - 1;
  if (k < 1 || k > limit) throw std::invalid_argument("knn: k out of range");

  // Squared distances via the Gram matrix; ordering matches unsquared.
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sq = rows.rowwise().squaredNorm();
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> gram =
      rows * rows.transpose();

  NeighborGraph graph;
  graph.include_self = include_self;
  graph.indices.resize(n, k);

  std::vector<std::pair<Scalar, int>> cand;
  cand.reserve(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    cand.clear();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      Scalar d2 = sq[i] + sq[j] - Scalar(2) * gram(i, j);
      if (d2 < Scalar(0)) d2 = Scalar(0);
      cand.emplace_back(d2, static_cast<int>(j));
    }
    const int others = include_self ? k - 1 : k;
    std::partial_sort(cand.begin(), cand.begin() + others, cand.end());

    if (include_self) {
      // Merge the self entry (distance 0) into the sorted prefix.
      std::vector<std::pair<Scalar, int>> chosen(cand.begin(),
                                                 cand.begin() + others);
      chosen.emplace_back(Scalar(0), static_cast<int>(i));
      std::sort(chosen.begin(), chosen.end());
      for (int c = 0; c < k; ++c) graph.indices(i, c) = chosen[c].second;
    } else {
      for (int c = 0; c < k; ++c) graph.indices(i, c) = cand[c].second;
    }
  }
  return graph;
}

}  // namespace pcreid
