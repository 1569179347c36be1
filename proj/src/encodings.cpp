#include "scanfill/encodings.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <string>

#include "scanfill/knn.hpp"

namespace scanfill {

namespace {

void require_neighbors(const Neighborhoods& nb, std::size_t k, std::size_t n, const char* what) {
  if (k > nb.k) {
    throw InvalidInput(std::string(what) + ": K = " + std::to_string(k) + " exceeds the " +
                       std::to_string(nb.k) + " precomputed neighbours");
  }
  if (nb.indices.size() != n * nb.k) {
    throw InvalidInput(std::string(what) + ": neighbourhoods do not match the cloud size");
  }
}

}  // namespace

Neighborhoods neighborhoods(const PointCloud& cloud, std::size_t k) {
  if (cloud.size() < 2 || k > cloud.size() - 1) {
    throw InvalidInput("K = " + std::to_string(k) + " neighbours requested but the cloud has only " +
                       std::to_string(cloud.size()) + " points (K must be <= N-1)");
  }
  const KnnIndex index(cloud);
  return Neighborhoods{k, index.member_neighbors(k)};
}

EncodingVector position_encoding(const PointCloud& cloud, std::size_t k) {
  return position_encoding(cloud, neighborhoods(cloud, k), k);
}

EncodingVector position_encoding(const PointCloud& cloud, const Neighborhoods& nb, std::size_t k) {
  require_neighbors(nb, k, cloud.size(), "position_encoding");
  if (k == 0) throw InvalidInput("position_encoding: K must be positive");
  EncodingVector out{std::vector<double>(cloud.size()), k, EncodingKind::position};
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    double total = 0;
    for (std::size_t j = 0; j < k; ++j) total += (cloud.positions[i] - cloud.positions[nb(i, j)]).norm();
    out.values[i] = total / static_cast<double>(k);
  }
  return out;
}

std::vector<Mat3> local_covariance(const PointCloud& cloud, std::size_t k) {
  if (k < 3) throw InvalidInput("local_covariance: K must be at least 3, got " + std::to_string(k));
  return local_covariance(cloud, neighborhoods(cloud, k), k);
}

std::vector<Mat3> local_covariance(const PointCloud& cloud, const Neighborhoods& nb, std::size_t k) {
  if (k < 3) throw InvalidInput("local_covariance: K must be at least 3, got " + std::to_string(k));
  require_neighbors(nb, k, cloud.size(), "local_covariance");
  std::vector<Mat3> out(cloud.size());
  const double inv_k = 1.0 / static_cast<double>(k);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    Vec3 mean = Vec3::Zero();
    for (std::size_t j = 0; j < k; ++j) mean += cloud.positions[nb(i, j)];
    mean *= inv_k;
    Mat3 c = Mat3::Zero();
    for (std::size_t j = 0; j < k; ++j) {
      const Vec3 d = cloud.positions[nb(i, j)] - mean;
      c.noalias() += d * d.transpose();
    }
    c *= inv_k;
    out[i] = 0.5 * (c + c.transpose());
  }
  return out;
}

SymmetricEigen eigen_sym3(const Mat3& m) {
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (!(asym <= 1e-8)) {
    throw InvalidInput("eigen_sym3: matrix is not symmetric (max |A - A^T| = " + std::to_string(asym) + ")");
  }
  const Mat3 sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> solver(sym);
  if (solver.info() != Eigen::Success) throw InvalidInput("eigen_sym3: decomposition failed");
  return SymmetricEigen{solver.eigenvalues(), solver.eigenvectors()};
}

std::vector<Vec3> estimate_normals(const PointCloud& cloud, std::size_t k,
                                   const NormalOrientation& orientation) {
  if (k < 3) throw InvalidInput("estimate_normals: K must be at least 3, got " + std::to_string(k));
  return estimate_normals(cloud, neighborhoods(cloud, k), k, orientation);
}

std::vector<Vec3> estimate_normals(const PointCloud& cloud, const Neighborhoods& nb, std::size_t k,
                                   const NormalOrientation& orientation) {
  const auto cov = local_covariance(cloud, nb, k);
  const Vec3 c = centroid(cloud.positions);
  std::vector<Vec3> normals(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    Vec3 n = eigen_sym3(cov[i]).vectors.col(0).normalized();
    const Vec3& p = cloud.positions[i];
    const double side = orientation.viewpoint ? n.dot(*orientation.viewpoint - p) : n.dot(p - c);
    if (std::abs(side) <= 1e-12) {
      if (n.z() < 0) n = -n;
    } else if (side < 0) {
      n = -n;
    }
    normals[i] = n;
  }
  return normals;
}

EncodingVector curvature_encoding(const PointCloud& cloud, std::size_t k, double eps) {
  return curvature_encoding(cloud, neighborhoods(cloud, k), k, eps);
}

EncodingVector curvature_encoding(const PointCloud& cloud, const Neighborhoods& nb, std::size_t k,
                                  double eps) {
  if (!cloud.has_normals()) throw InvalidInput("curvature_encoding: cloud has no normals");
  if (!(eps > 0)) throw InvalidInput("curvature_encoding: eps must be positive");
  if (k == 0) throw InvalidInput("curvature_encoding: K must be positive");
  require_neighbors(nb, k, cloud.size(), "curvature_encoding");
  EncodingVector out{std::vector<double>(cloud.size()), k, EncodingKind::curvature};
  std::vector<double> v(k);
  const double inv_k = 1.0 / static_cast<double>(k);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& ni = cloud.normals[i];
    double mean = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const Vec3& nj = cloud.normals[nb(i, j)];
      v[j] = 1.0 - ni.dot(nj) / std::max(ni.norm() * nj.norm(), eps);
      mean += v[j];
    }
    mean *= inv_k;
    double var = 0;
    for (std::size_t j = 0; j < k; ++j) var += (v[j] - mean) * (v[j] - mean);
    out.values[i] = std::sqrt(var * inv_k);
  }
  return out;
}

PatternEncodings compute_encodings(const PointCloud& cloud, const EncodingParams& params,
                                   const NormalOrientation& orientation) {
  const std::size_t k_max = std::max(params.k_position, params.k_curvature);
  const Neighborhoods nb = neighborhoods(cloud, k_max);
  PatternEncodings out;
  out.position = position_encoding(cloud, nb, params.k_position);
  out.normals = estimate_normals(cloud, nb, params.k_curvature, orientation);
  PointCloud with_normals(cloud.positions, out.normals);
  out.curvature = curvature_encoding(with_normals, nb, params.k_curvature, params.eps);
  return out;
}

}  // namespace scanfill
