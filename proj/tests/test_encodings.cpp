#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "scanfill/encodings.hpp"
#include "test_support.hpp"

using namespace scanfill;

namespace {

PointCloud planar_grid(int n, double spacing = 1.0) {
  PointCloud c;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) c.positions.emplace_back(x * spacing, y * spacing, 0.0);
  return c;
}

PointCloud sphere_samples(std::mt19937_64& rng, std::size_t n) {
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.positions.push_back(test::random_unit(rng));
  return c;
}

double angle_between(const Vec3& a, const Vec3& b) {
  return std::acos(std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0));
}

// Direct evaluation of the mean neighbour distance, using the brute-force knn.
std::vector<double> oracle_position(const PointCloud& c, std::size_t k) {
  std::vector<double> out;
  for (std::size_t i = 0; i < c.size(); ++i) {
    double s = 0;
    for (const auto& [d, j] : test::brute_knn(c.positions, c.positions[i], k, static_cast<long>(i))) s += d;
    out.push_back(s / static_cast<double>(k));
  }
  return out;
}

std::vector<double> oracle_curvature(const PointCloud& c, std::size_t k, double eps) {
  std::vector<double> out;
  for (std::size_t i = 0; i < c.size(); ++i) {
    std::vector<double> v;
    for (const auto& [d, j] : test::brute_knn(c.positions, c.positions[i], k, static_cast<long>(i))) {
      const Vec3& a = c.normals[i];
      const Vec3& b = c.normals[j];
      v.push_back(1.0 - a.dot(b) / std::max(a.norm() * b.norm(), eps));
    }
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    out.push_back(std::sqrt(var / static_cast<double>(v.size())));
  }
  return out;
}

PointCloud rigid(const PointCloud& c, const Mat3& r, const Vec3& t, double s = 1.0) {
  PointCloud o;
  for (const auto& p : c.positions) o.positions.push_back(s * (r * p) + t);
  return o;
}

}  // namespace

TEST_CASE("grid interior position encoding is the spacing") {
  const auto grid = planar_grid(9);
  const auto e = position_encoding(grid, 4);
  CHECK(e.kind == EncodingKind::position);
  CHECK(e.k_used == 4);
  for (int y = 1; y < 8; ++y)
    for (int x = 1; x < 8; ++x) CHECK(std::abs(e.values[y * 9 + x] - 1.0) < 1e-6);
  const auto half = position_encoding(planar_grid(9, 0.25), 4);
  CHECK(std::abs(half.values[40] - 0.25) < 1e-6);
}

TEST_CASE("position encoding matches a direct double loop") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 20; ++t) {
    const auto c = test::random_cloud(rng, 64);
    CHECK(test::max_abs_diff(position_encoding(c, 16).values, oracle_position(c, 16)) < 1e-6);
  }
  CHECK_THROWS_AS((void)position_encoding(test::random_cloud(rng, 10), 10), InvalidInput);
}

TEST_CASE("position encoding invariances") {
  std::mt19937_64 rng(12);
  const auto c = test::random_cloud(rng, 128);
  const auto base = position_encoding(c, 16).values;
  const Mat3 r = test::random_rotation(rng);
  const Vec3 t(0.3, -1.2, 2.0);
  CHECK(test::max_abs_diff(position_encoding(rigid(c, r, t), 16).values, base) < 1e-6);
  const double s = 2.0;  // power of two keeps the scaling exact
  const auto scaled = position_encoding(rigid(c, Mat3::Identity(), Vec3::Zero(), s), 16).values;
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(scaled[i] == s * base[i]);
}

TEST_CASE("local covariance") {
  SUBCASE("coplanar neighbours have a zero eigenvalue") {
    const auto cov = local_covariance(planar_grid(6), 8);
    for (const auto& c : cov) {
      CHECK(c == c.transpose());
      CHECK(std::abs(eigen_sym3(c).values[0]) < 1e-10);
    }
  }
  SUBCASE("matches a direct computation") {
    std::mt19937_64 rng(13);
    const auto cloud = test::random_cloud(rng, 40);
    const auto cov = local_covariance(cloud, 10);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto nn = test::brute_knn(cloud.positions, cloud.positions[i], 10, static_cast<long>(i));
      double m[3] = {0, 0, 0};
      for (const auto& [d, j] : nn)
        for (int a = 0; a < 3; ++a) m[a] += cloud.positions[j][a] / 10.0;
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
          double s = 0;
          for (const auto& [d, j] : nn) s += (cloud.positions[j][a] - m[a]) * (cloud.positions[j][b] - m[b]);
          CHECK(std::abs(cov[i](a, b) - s / 10.0) < 1e-12);
        }
    }
  }
  SUBCASE("isotropic neighbourhood") {
    // Centre plus the six axis points at distance 1: variance 1/3 per axis.
    PointCloud c({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 1, 0), Vec3(0, -1, 0), Vec3(0, 0, 1),
                  Vec3(0, 0, -1)});
    const auto cov = local_covariance(c, 6);
    CHECK((cov[0] - Mat3::Identity() / 3.0).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS((void)local_covariance(planar_grid(3), 2), InvalidInput);
}

TEST_CASE("eigen_sym3") {
  const auto d = eigen_sym3(Vec3(1, 2, 3).asDiagonal().toDenseMatrix());
  CHECK((d.values - Vec3(1, 2, 3)).norm() < 1e-12);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(std::abs(d.vectors(k, k)) - 1.0) < 1e-12);
  const auto id = eigen_sym3(Mat3::Identity());
  CHECK((id.values - Vec3(1, 1, 1)).norm() < 1e-12);

  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(-3, 3);
  double worst = 0, worst_ortho = 0;
  for (int t = 0; t < 1000; ++t) {
    Mat3 a;
    for (int i = 0; i < 3; ++i)
      for (int j = i; j < 3; ++j) a(i, j) = a(j, i) = u(rng);
    const auto e = eigen_sym3(a);
    for (int k = 0; k < 3; ++k)
      worst = std::max(worst, (a * e.vectors.col(k) - e.values[k] * e.vectors.col(k)).cwiseAbs().maxCoeff());
    worst_ortho = std::max(worst_ortho, (e.vectors.transpose() * e.vectors - Mat3::Identity()).cwiseAbs().maxCoeff());
    CHECK(e.values[0] <= e.values[1]);
    CHECK(e.values[1] <= e.values[2]);
  }
  CHECK(worst < 1e-8);
  CHECK(worst_ortho < 1e-8);
  Mat3 asym = Mat3::Identity();
  asym(0, 1) = 1e-3;
  CHECK_THROWS_AS((void)eigen_sym3(asym), InvalidInput);
}

TEST_CASE("normals on analytic surfaces") {
  std::mt19937_64 rng(15);
  SUBCASE("plane") {
    PointCloud c;
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 500; ++i) c.positions.emplace_back(u(rng), u(rng), 0.0);
    // The centroid lies in the plane, so every dot product ties and +z wins.
    for (const auto& n : estimate_normals(c, 16)) CHECK(angle_between(n, Vec3(0, 0, 1)) < 0.05);
    const auto toward = estimate_normals(c, 16, NormalOrientation{Vec3(0, 0, -3)});
    for (const auto& n : toward) CHECK(angle_between(n, Vec3(0, 0, -1)) < 0.05);
  }
  SUBCASE("sphere") {
    const auto c = test::fibonacci_sphere(2048);
    const auto normals = estimate_normals(c, 16);
    double worst = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      worst = std::max(worst, angle_between(normals[i], c.positions[i]));
      CHECK(std::abs(normals[i].norm() - 1.0) < 1e-5);
    }
    CHECK(worst < 0.05);
    // Random samples clump, so only the mean error is held to the same bound.
    const auto rnd = sphere_samples(rng, 2048);
    const auto rn = estimate_normals(rnd, 16);
    double mean = 0;
    for (std::size_t i = 0; i < rnd.size(); ++i) mean += angle_between(rn[i], rnd.positions[i]) / 2048.0;
    CHECK(mean < 0.05);
  }
  SUBCASE("cylinder side wall") {
    PointCloud c;
    const int rings = 32, per_ring = 64;
    for (int k = 0; k < rings; ++k)
      for (int j = 0; j < per_ring; ++j) {
        const double a = 2 * std::numbers::pi * (j + 0.5 * (k % 2)) / per_ring;
        c.positions.emplace_back(0.5 * std::cos(a), 0.5 * std::sin(a), -1.0 + 2.0 * k / (rings - 1));
      }
    const auto normals = estimate_normals(c, 16);
    double worst = 0;
    // Skip the two open rims, where neighbourhoods are one-sided.
    for (std::size_t i = 2 * per_ring; i < c.size() - 2 * per_ring; ++i) {
      const Vec3 radial(c.positions[i].x(), c.positions[i].y(), 0);
      worst = std::max(worst, angle_between(normals[i], radial));
    }
    CHECK(worst < 0.05);
  }
}

TEST_CASE("curvature encoding") {
  std::mt19937_64 rng(16);
  SUBCASE("plane is flat") {
    PointCloud c = planar_grid(12);
    c.normals = estimate_normals(c, 24);
    for (double v : curvature_encoding(c, 24).values) CHECK(v < 1e-6);
  }
  SUBCASE("sphere is strictly curved") {
    PointCloud c = sphere_samples(rng, 600);
    c.normals = estimate_normals(c, 24);
    for (double v : curvature_encoding(c, 24).values) CHECK(v > 0);
  }
  SUBCASE("random normals match the direct formula and stay in [0, 1]") {
    for (int t = 0; t < 20; ++t) {
      PointCloud c = test::random_cloud(rng, 64);
      for (std::size_t i = 0; i < c.size(); ++i) c.normals.push_back(test::random_unit(rng) * (0.5 + i % 3));
      const auto e = curvature_encoding(c, 24);
      CHECK(e.kind == EncodingKind::curvature);
      CHECK(test::max_abs_diff(e.values, oracle_curvature(c, 24, 1e-8)) < 1e-6);
      for (double v : e.values) {
        CHECK(v >= 0);
        CHECK(v <= 1.0);
      }
    }
  }
  SUBCASE("rigid and scale invariance") {
    PointCloud c = sphere_samples(rng, 400);
    for (auto& p : c.positions) p.z() *= 0.6;
    const auto base = compute_encodings(c, {}).curvature.values;
    const Mat3 r = test::random_rotation(rng);
    const auto moved = compute_encodings(rigid(c, r, Vec3(1, 2, -1)), {}).curvature.values;
    CHECK(test::max_abs_diff(base, moved) < 1e-5);
    const auto scaled = compute_encodings(rigid(c, Mat3::Identity(), Vec3::Zero(), 3.7), {}).curvature.values;
    CHECK(test::max_abs_diff(base, scaled) < 1e-5);
  }
  SUBCASE("missing normals") { CHECK_THROWS_AS((void)curvature_encoding(planar_grid(5), 4), InvalidInput); }
}

TEST_CASE("compute_encodings uses the configured neighbourhoods") {
  std::mt19937_64 rng(17);
  const auto c = test::random_cloud(rng, 64);
  const auto e = compute_encodings(c, EncodingParams{});
  CHECK(e.position.k_used == 16);
  CHECK(e.curvature.k_used == 24);
  CHECK(test::max_abs_diff(e.position.values, oracle_position(c, 16)) < 1e-9);
  PointCloud with_normals(c.positions, e.normals);
  CHECK(test::max_abs_diff(e.curvature.values, oracle_curvature(with_normals, 24, 1e-8)) < 1e-9);
}
