#include "scanfill/point_cloud.hpp"

#include <string>

namespace scanfill {

void PointCloud::validate() const {
  if (!normals.empty() && normals.size() != positions.size()) {
    throw InvalidInput("point cloud has " + std::to_string(positions.size()) + " positions but " +
                       std::to_string(normals.size()) + " normals");
  }
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (!positions[i].allFinite()) {
      throw InvalidInput("point " + std::to_string(i) + " has a non-finite coordinate");
    }
  }
}

Vec3 centroid(std::span<const Vec3> points) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : points) c += p;
  return points.empty() ? c : Vec3(c / static_cast<double>(points.size()));
}

Normalized normalize_unit_sphere(const PointCloud& cloud) {
  cloud.validate();
  if (cloud.size() < 2) throw InvalidInput("normalization needs at least 2 points");
  Normalized out;
  out.center = centroid(cloud.positions);
  double radius = 0;
  for (const auto& p : cloud.positions) radius = std::max(radius, (p - out.center).norm());
  if (!(radius > 0)) throw InvalidInput("cannot normalize a cloud whose points all coincide");
  out.scale = radius;
  out.cloud = apply_normalization(cloud, out.center, out.scale);
  return out;
}

PointCloud apply_normalization(const PointCloud& cloud, const Vec3& center, double scale) {
  PointCloud out = cloud;
  for (auto& p : out.positions) p = (p - center) / scale;
  return out;
}

PointCloud undo_normalization(const PointCloud& cloud, const Vec3& center, double scale) {
  PointCloud out = cloud;
  for (auto& p : out.positions) p = p * scale + center;
  return out;
}

}  // namespace scanfill
