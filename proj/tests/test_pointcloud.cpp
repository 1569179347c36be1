#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>

#include "scanfill/knn.hpp"
#include "scanfill/ply.hpp"
#include "test_support.hpp"

using namespace scanfill;

namespace {

bool matches_brute_force(const KnnIndex& index, const std::vector<Vec3>& pts, const Vec3& q, std::size_t k,
                         std::optional<std::size_t> exclude) {
  const auto got = index.query(q, k, exclude);
  const auto want = test::brute_knn(pts, q, k, exclude ? static_cast<long>(*exclude) : -1);
  if (got.size() != want.size()) return false;
  for (std::size_t i = 0; i < got.size(); ++i) {
    // FMA contraction may differ between the library and this file by an ulp.
    if (got[i].index != want[i].second || std::abs(got[i].distance - want[i].first) > 1e-12) return false;
  }
  return true;
}

std::filesystem::path temp_file(const char* name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_CASE("single-point index returns that point") {
  const std::vector<Vec3> pts{Vec3(1, 2, 3)};
  const KnnIndex index(pts);
  const auto r = index.query(Vec3(-5, 0, 9), 1);
  REQUIRE(r.size() == 1);
  CHECK(r[0].index == 0);
}

TEST_CASE("collinear unit spacing") {
  std::vector<Vec3> pts;
  for (int i = 0; i < 7; ++i) pts.emplace_back(i, 0, 0);
  const KnnIndex index(pts);
  const auto r = index.query(pts[3], 2, 3);
  REQUIRE(r.size() == 2);
  CHECK(r[0].index == 2);
  CHECK(r[1].index == 4);
  CHECK(r[0].distance == 1.0);
  CHECK(r[1].distance == 1.0);
  const auto all = index.query(pts[0], 7);
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i].index == i);
  CHECK_THROWS_AS((void)index.query(pts[0], 7, 0), InvalidInput);
  CHECK_THROWS_AS((void)index.query(pts[0], 8), InvalidInput);
}

TEST_CASE("duplicates come before farther points") {
  const std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 0, 0), Vec3(0.5, 0, 0)};
  const KnnIndex index(pts);
  const auto r = index.query(Vec3(0, 0, 0), 3);
  CHECK(r[0].index == 0);
  CHECK(r[1].index == 2);
  CHECK(r[2].index == 3);
  // Excluding self at a duplicate keeps the other copy.
  const auto s = index.query(pts[2], 1, 2);
  CHECK(s[0].index == 0);
  CHECK(s[0].distance == 0.0);
}

TEST_CASE("non-finite coordinates are rejected") {
  const std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(std::nan(""), 0, 0)};
  CHECK_THROWS_AS(KnnIndex{pts}, InvalidInput);
}

TEST_CASE("knn equals brute force on random clouds") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> nd(8, 512), kd(1, 32);
  const auto start = std::chrono::steady_clock::now();
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = nd(rng);
    const std::size_t k = std::min<std::size_t>(kd(rng), n - 1);
    auto cloud = test::random_cloud(rng, n);
    // Snap some coordinates to a lattice so exact ties are exercised.
    if (c % 3 == 0)
      for (auto& p : cloud.positions) p = (p * 4).array().round().matrix() / 4;
    const KnnIndex index(cloud);
    for (std::size_t i = 0; i < n; ++i) REQUIRE(matches_brute_force(index, cloud.positions, cloud.positions[i], k, i));
    for (int q = 0; q < 20; ++q) {
      const Vec3 query = test::random_cloud(rng, 1, 1.2).positions[0];
      REQUIRE(matches_brute_force(index, cloud.positions, query, k, std::nullopt));
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(secs < 10.0);
}

TEST_CASE("1000 random queries against a 512-point cloud") {
  std::mt19937_64 rng(77);
  const auto cloud = test::random_cloud(rng, 512);
  const KnnIndex index(cloud);
  for (int q = 0; q < 1000; ++q) {
    const Vec3 query = test::random_cloud(rng, 1, 1.5).positions[0];
    REQUIRE(matches_brute_force(index, cloud.positions, query, 16, std::nullopt));
  }
}

TEST_CASE("knn distances ascend and builds are deterministic") {
  std::mt19937_64 rng(5);
  const auto cloud = test::random_cloud(rng, 300);
  const KnnIndex a(cloud), b(cloud);
  for (int i = 0; i < 50; ++i) {
    const auto ra = a.query(cloud.positions[i], 20, i);
    const auto rb = b.query(cloud.positions[i], 20, i);
    for (std::size_t j = 0; j < ra.size(); ++j) {
      CHECK(ra[j].index == rb[j].index);
      if (j > 0) CHECK(ra[j].distance >= ra[j - 1].distance);
    }
  }
}

TEST_CASE("normalize to the unit sphere") {
  SUBCASE("offset sphere") {
    std::mt19937_64 rng(3);
    PointCloud c;
    for (int i = 0; i < 400; ++i) c.positions.push_back(Vec3(1, 2, 3) + 5 * test::random_unit(rng));
    // Antipodal pairs make the centroid exactly the sphere centre.
    const auto n = c.positions.size();
    for (std::size_t i = 0; i < n; ++i) c.positions.push_back(Vec3(2, 4, 6) - c.positions[i]);
    const auto r = normalize_unit_sphere(c);
    CHECK((r.center - Vec3(1, 2, 3)).norm() < 1e-9);
    CHECK(r.scale == doctest::Approx(5.0));
    for (const auto& p : r.cloud.positions) CHECK(std::abs(p.norm() - 1.0) < 1e-9);
  }
  SUBCASE("already normalized is the identity") {
    std::mt19937_64 rng(4);
    const auto once = normalize_unit_sphere(test::random_cloud(rng, 64)).cloud;
    const auto twice = normalize_unit_sphere(once);
    CHECK(twice.center.norm() < 1e-6);
    CHECK(std::abs(twice.scale - 1.0) < 1e-6);
  }
  SUBCASE("round trip") {
    std::mt19937_64 rng(5);
    auto c = test::random_cloud(rng, 200, 7.0);
    for (auto& p : c.positions) p += Vec3(10, -3, 2);
    const auto r = normalize_unit_sphere(c);
    CHECK(centroid(r.cloud.positions).norm() < 1e-6);
    double maxr = 0;
    for (const auto& p : r.cloud.positions) maxr = std::max(maxr, p.norm());
    CHECK(std::abs(maxr - 1.0) < 1e-6);
    const auto back = undo_normalization(r.cloud, r.center, r.scale);
    double err = 0;
    for (std::size_t i = 0; i < c.size(); ++i) err = std::max(err, (back.positions[i] - c.positions[i]).norm());
    CHECK(err < 1e-6);
  }
  SUBCASE("degenerate") {
    PointCloud c({Vec3(1, 1, 1), Vec3(1, 1, 1)});
    CHECK_THROWS_AS((void)normalize_unit_sphere(c), InvalidInput);
  }
}

TEST_CASE("PLY round trips") {
  const auto path = temp_file("scanfill_ply_test.ply");
  SUBCASE("positions") {
    PointCloud c({Vec3(0.1, -2.5, 3.25), Vec3(1e-3, 4.0, -0.7), Vec3(0, 0, 1)});
    write_ply(path, c);
    const auto r = read_ply(path);
    REQUIRE(r.size() == 3);
    CHECK_FALSE(r.has_normals());
    for (std::size_t i = 0; i < 3; ++i) CHECK((r.positions[i] - c.positions[i]).norm() < 1e-8);
  }
  SUBCASE("normals") {
    PointCloud c({Vec3(1, 2, 3), Vec3(4, 5, 6)}, {Vec3(0, 0, 1), Vec3(0.6, 0.8, 0)});
    write_ply(path, c);
    const auto r = read_ply(path);
    REQUIRE(r.has_normals());
    CHECK((r.normals[1] - Vec3(0.6, 0.8, 0)).norm() < 1e-9);
  }
  std::filesystem::remove(path);
}

TEST_CASE("PLY errors carry line numbers") {
  const auto path = temp_file("scanfill_ply_bad.ply");
  auto write = [&](const std::string& text) {
    std::ofstream os(path);
    os << text;
  };
  auto message = [&]() -> std::string {
    try {
      (void)read_ply(path);
    } catch (const IoError& e) {
      return e.what();
    }
    return "";
  };
  const std::string header =
      "ply\nformat ascii 1.0\nelement vertex 5\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  write(header + "0 0 0\n1 1 1\n2 2 2\n3 3 3\n");
  auto msg = message();
  CHECK(msg.find("declared 5 vertices but found 4") != std::string::npos);

  write(header + "0 0 0\n1 abc 1\n");
  msg = message();
  CHECK(msg.find(":9:") != std::string::npos);
  CHECK(msg.find("non-numeric") != std::string::npos);

  write("ply\nformat ascii 1.0\nelement vertex 1\nproperty uchar x\nend_header\n");
  msg = message();
  CHECK(msg.find(":4:") != std::string::npos);

  write("plx\n");
  CHECK(message().find("magic") != std::string::npos);
  std::filesystem::remove(path);
}
