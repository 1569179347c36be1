#pragma once

// Test-only helpers: random inputs and brute-force oracles that share no
// code with the library implementations they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <numbers>
#include <string>
#include <limits>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Geometry>

#include "scanfill/point_cloud.hpp"
#include "scanfill/tensor.hpp"

namespace scanfill::test {

inline std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline ad::Tensord random_tensor(std::mt19937_64& rng, ad::Shape shape, double lo = -1, double hi = 1) {
  const auto n = ad::numel(shape);
  return ad::Tensord(std::move(shape), uniform(rng, n, lo, hi));
}

/// Values bounded away from zero in magnitude, for ops with a kink at 0.
inline ad::Tensord away_from_zero(std::mt19937_64& rng, ad::Shape shape) {
  auto v = uniform(rng, ad::numel(shape), 0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& x : v)
    if (sign(rng)) x = -x;
  return ad::Tensord(std::move(shape), std::move(v));
}

inline PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, double extent = 1.0) {
  std::uniform_real_distribution<double> d(-extent, extent);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.positions.emplace_back(d(rng), d(rng), d(rng));
  return c;
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vec3 v(g(rng), g(rng), g(rng));
  return v.normalized();
}

/// Uniform random rotation via a normalized Gaussian quaternion.
inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  q.normalize();
  return q.toRotationMatrix();
}

/// Sorted (distance, index) scan over every point.
inline std::vector<std::pair<double, std::size_t>> brute_knn(const std::vector<Vec3>& pts, const Vec3& q,
                                                             std::size_t k, long exclude = -1) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d2 = (pts[i] - q).squaredNorm();
    if (static_cast<long>(i) == exclude && d2 == 0.0) continue;
    all.emplace_back(d2, i);
  }
  std::sort(all.begin(), all.end());
  all.resize(std::min(k, all.size()));
  for (auto& e : all) e.first = std::sqrt(e.first);
  return all;
}

/// Nearest-neighbour distance from q to any point of `to` (double loop).
inline double nn_dist(const Vec3& q, const std::vector<Vec3>& to) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : to) best = std::min(best, (p - q).norm());
  return best;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Fibonacci lattice: near-uniform spacing with no clumps.
inline PointCloud fibonacci_sphere(std::size_t n, double radius = 1.0) {
  PointCloud c;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / static_cast<double>(n);
    const double r = std::sqrt(1.0 - z * z);
    c.positions.emplace_back(radius * r * std::cos(golden * i), radius * r * std::sin(golden * i), radius * z);
  }
  return c;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("scanfill_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace scanfill::test
