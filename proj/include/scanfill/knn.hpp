#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "scanfill/point_cloud.hpp"

namespace scanfill {

struct Neighbor {
  std::size_t index;
  double distance;
};

/// Exact k-nearest-neighbour search over a kd-tree. Results are ordered by
/// ascending distance with ties broken by ascending point index, so they are
/// identical to a sorted brute-force scan.
class KnnIndex {
 public:
  explicit KnnIndex(std::span<const Vec3> points, std::size_t leaf_size = 10);
  explicit KnnIndex(const PointCloud& cloud) : KnnIndex(std::span<const Vec3>(cloud.positions)) {}

  /// `exclude` names the query's own index; that point is dropped when it
  /// sits at zero distance from the query.
  std::vector<Neighbor> query(const Vec3& q, std::size_t k,
                              std::optional<std::size_t> exclude = std::nullopt) const;

  /// K nearest neighbours of every member point, self excluded. Row-major
  /// N x k indices.
  std::vector<std::size_t> member_neighbors(std::size_t k) const;

  std::size_t size() const { return points_.size(); }
  std::span<const Vec3> points() const { return points_; }

 private:
  struct Node {
    std::size_t begin, end;  // range into order_
    int axis = -1;           // -1 for leaves
    double split = 0;
    std::size_t left = 0, right = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end);

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_;
};

}  // namespace scanfill
