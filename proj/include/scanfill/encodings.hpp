#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "scanfill/point_cloud.hpp"

namespace scanfill {

enum class EncodingKind { position, curvature };

/// One nonnegative scalar per point describing its local pattern.
struct EncodingVector {
  std::vector<double> values;
  std::size_t k_used = 0;
  EncodingKind kind = EncodingKind::position;
};

/// Row-major N x k neighbour indices (self excluded), nearest first.
struct Neighborhoods {
  std::size_t k = 0;
  std::vector<std::size_t> indices;

  std::size_t operator()(std::size_t point, std::size_t j) const { return indices[point * k + j]; }
};

/// K nearest neighbours of every point, excluding the point itself.
Neighborhoods neighborhoods(const PointCloud& cloud, std::size_t k);

/// Mean Euclidean distance from each point to its K nearest neighbours.
EncodingVector position_encoding(const PointCloud& cloud, std::size_t k);
EncodingVector position_encoding(const PointCloud& cloud, const Neighborhoods& nb, std::size_t k);

/// Covariance of each point's K neighbours about their own centroid.
std::vector<Mat3> local_covariance(const PointCloud& cloud, std::size_t k);
std::vector<Mat3> local_covariance(const PointCloud& cloud, const Neighborhoods& nb, std::size_t k);

struct SymmetricEigen {
  Vec3 values;   // ascending
  Mat3 vectors;  // column i pairs with values[i]; orthonormal
};

/// Eigen-decomposition of a symmetric 3x3 matrix. Rejects inputs whose
/// asymmetry exceeds 1e-8.
SymmetricEigen eigen_sym3(const Mat3& m);

/// Where normals should point. Without a viewpoint, normals face away from
/// the cloud centroid; with one, they face the viewpoint. Exact ties face +z.
struct NormalOrientation {
  std::optional<Vec3> viewpoint;
};

/// Smallest-eigenvalue direction of each point's neighbourhood covariance,
/// sign-disambiguated by `orientation`.
std::vector<Vec3> estimate_normals(const PointCloud& cloud, std::size_t k,
                                   const NormalOrientation& orientation = {});
std::vector<Vec3> estimate_normals(const PointCloud& cloud, const Neighborhoods& nb, std::size_t k,
                                   const NormalOrientation& orientation = {});

/// Population standard deviation, over each point's K neighbours, of
/// v(i,j) = 1 - n_i.n_j / max(|n_i||n_j|, eps). Requires cloud normals.
EncodingVector curvature_encoding(const PointCloud& cloud, std::size_t k, double eps = 1e-8);
EncodingVector curvature_encoding(const PointCloud& cloud, const Neighborhoods& nb, std::size_t k,
                                  double eps = 1e-8);

struct EncodingParams {
  std::size_t k_position = 16;
  std::size_t k_curvature = 24;
  double eps = 1e-8;
};

struct PatternEncodings {
  EncodingVector position;
  EncodingVector curvature;
  std::vector<Vec3> normals;
};

/// Position and curvature encodings of a cloud; normals are estimated with
/// the curvature neighbourhood size.
PatternEncodings compute_encodings(const PointCloud& cloud, const EncodingParams& params,
                                   const NormalOrientation& orientation = {});

}  // namespace scanfill
