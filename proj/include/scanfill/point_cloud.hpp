#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "scanfill/tensor.hpp"

namespace scanfill {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Ordered 3D points with optional per-point unit normals.
struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;  // empty, or one per position

  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> p, std::vector<Vec3> n = {})
      : positions(std::move(p)), normals(std::move(n)) {}

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }
  bool has_normals() const { return !normals.empty(); }

  /// Throws InvalidInput on non-finite coordinates or mismatched normals.
  void validate() const;
};

Vec3 centroid(std::span<const Vec3> points);

struct Normalized {
  PointCloud cloud;
  Vec3 center = Vec3::Zero();
  double scale = 1.0;
};

/// Translates the centroid to the origin and scales so the farthest point is
/// at distance 1. Original = normalized * scale + center.
Normalized normalize_unit_sphere(const PointCloud& cloud);
PointCloud apply_normalization(const PointCloud& cloud, const Vec3& center, double scale);
PointCloud undo_normalization(const PointCloud& cloud, const Vec3& center, double scale);

template <typename T>
ad::Tensor<T> to_tensor(const PointCloud& cloud) {
  std::vector<T> v(cloud.size() * 3);
  for (std::size_t i = 0; i < cloud.size(); ++i)
    for (int d = 0; d < 3; ++d) v[i * 3 + d] = static_cast<T>(cloud.positions[i][d]);
  return ad::Tensor<T>({cloud.size(), 3}, std::move(v));
}

template <typename T>
PointCloud to_cloud(const ad::Tensor<T>& t) {
  if (t.rank() != 2 || t.dim(1) != 3) {
    throw ShapeError("expected an N x 3 point tensor, got " + ad::to_string(t.shape()));
  }
  PointCloud c;
  c.positions.resize(t.dim(0));
  const auto v = t.data();
  for (std::size_t i = 0; i < c.size(); ++i)
    c.positions[i] = Vec3(static_cast<double>(v[i * 3]), static_cast<double>(v[i * 3 + 1]),
                          static_cast<double>(v[i * 3 + 2]));
  return c;
}

}  // namespace scanfill
