#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "scanfill/gradcheck.hpp"
#include "scanfill/losses.hpp"
#include "scanfill/ops.hpp"
#include "test_support.hpp"

using namespace scanfill;
using namespace scanfill::ad;

namespace {

// Double-loop oracles, independent of the library's nearest-neighbour code.
double oracle_ucd(const std::vector<Vec3>& a, const std::vector<Vec3>& b, bool squared) {
  double s = 0;
  for (const auto& p : a) {
    const double d = test::nn_dist(p, b);
    s += squared ? d * d : d;
  }
  return s / static_cast<double>(a.size());
}

double oracle_density(const std::vector<Vec3>& pts, std::size_t k) {
  std::vector<double> delta;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double s = 0;
    for (const auto& [d, j] : test::brute_knn(pts, pts[i], k, static_cast<long>(i))) s += d;
    delta.push_back(s / static_cast<double>(k));
  }
  double mean = 0;
  for (double d : delta) mean += d;
  mean /= static_cast<double>(delta.size());
  double var = 0;
  for (double d : delta) var += (d - mean) * (d - mean);
  return var / static_cast<double>(delta.size());
}

double oracle_rendering(const std::vector<double>& s0, const std::vector<double>& so, const std::vector<double>& sc) {
  double t1 = 0, t2 = 0;
  for (std::size_t i = 0; i < s0.size(); ++i) {
    t1 += (s0[i] - so[i]) * (s0[i] - so[i]);
    if (sc[i] > 0.5) t2 += (s0[i] - sc[i]) * (s0[i] - sc[i]);
  }
  return (t1 + t2) / static_cast<double>(s0.size());
}

std::vector<double> values(const Tensord& t) { return {t.data().begin(), t.data().end()}; }

PointCloud cloud_of(const Tensord& t) { return to_cloud(t); }

// Random cloud whose points are pairwise well separated (no near ties).
Tensord separated_cloud(std::mt19937_64& rng, std::size_t n) {
  Tensord t = test::random_tensor(rng, {n, 3});
  return t;
}

}  // namespace

TEST_CASE("ucd hand values") {
  const Tensord a({2, 3}, {0, 0, 0, 1, 0, 0});
  const Tensord b({1, 3}, {0, 0, 0});
  CHECK(ucd(a, b).item() == doctest::Approx(0.5));
  CHECK(ucd(a, b, true).item() == doctest::Approx(0.5));
  CHECK(ucd(a, a).item() == 0.0);
  CHECK(ucd(b, a).item() == 0.0);  // subset
  CHECK(ucd(a, b).item() > 0.0);
  CHECK_THROWS_AS((void)ucd(Tensord::zeros({0, 3}), b), InvalidInput);
}

TEST_CASE("losses match direct evaluation on 20 random instances") {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n1 = 9 + rng() % 56, n2 = 9 + rng() % 56, n3 = 9 + rng() % 56;
    const auto p_in = test::random_tensor(rng, {n1, 3});
    const auto p_c = test::random_tensor(rng, {n2, 3});
    const auto p_out = test::random_tensor(rng, {n3, 3});
    const auto a = cloud_of(p_in).positions, b = cloud_of(p_c).positions, c = cloud_of(p_out).positions;
    CHECK(std::abs(ucd(p_in, p_c).item() - oracle_ucd(a, b, false)) < 1e-6);
    CHECK(std::abs(ucd(p_in, p_c, true).item() - oracle_ucd(a, b, true)) < 1e-6);
    CHECK(std::abs(partial_matching_loss(p_in, p_c, p_out).item() -
                   (oracle_ucd(a, b, false) + oracle_ucd(a, c, false))) < 1e-6);
    CHECK(std::abs(density_loss(p_out, 8).item() - oracle_density(c, 8)) < 1e-6);

    const std::size_t h = 4 + rng() % 8, w = 4 + rng() % 8;
    const auto s0 = test::random_tensor(rng, {h, w}, 0, 1);
    const auto so = test::random_tensor(rng, {h, w}, 0, 1);
    const auto sc = test::random_tensor(rng, {h, w}, 0, 1);
    CHECK(std::abs(rendering_loss(s0, so, sc).item() - oracle_rendering(values(s0), values(so), values(sc))) < 1e-7);

    const auto m = evaluate(cloud_of(p_out), cloud_of(p_in));
    double uhd = 0;
    for (const auto& p : c) uhd = std::max(uhd, test::nn_dist(p, a));
    CHECK(std::abs(m.precision - oracle_ucd(c, a, true)) < 1e-9);
    CHECK(std::abs(m.coverage - oracle_ucd(a, c, true)) < 1e-9);
    CHECK(std::abs(m.cd_l2 - (m.precision + m.coverage)) < 1e-9);
    CHECK(std::abs(m.ucd - oracle_ucd(c, a, true)) < 1e-9);
    CHECK(std::abs(m.uhd - uhd) < 1e-9);
    CHECK(m.uhd >= oracle_ucd(c, a, false));
  }
}

TEST_CASE("partial matching, rendering and density special cases") {
  std::mt19937_64 rng(22);
  const auto p = test::random_tensor(rng, {20, 3});
  CHECK(partial_matching_loss(p, p, p).item() == 0.0);
  const auto bigger = concat<double>({p, test::random_tensor(rng, {5, 3})}, 0);
  CHECK(partial_matching_loss(p, bigger, bigger).item() == 0.0);

  const auto s0 = test::random_tensor(rng, {6, 6}, 0, 1);
  CHECK(rendering_loss(s0, s0, Tensord::zeros({6, 6})).item() == 0.0);
  // s_c matches s0 wherever it is foreground.
  std::vector<double> sc(36, 0.0);
  for (std::size_t i = 0; i < 36; i += 3) sc[i] = s0[i];
  CHECK(rendering_loss(s0, s0, Tensord({6, 6}, sc)).item() == 0.0);
  CHECK_THROWS_AS((void)rendering_loss(s0, Tensord::zeros({5, 6}), s0), ShapeError);

  // Periodic grid: every point sees the same neighbourhood.
  std::vector<double> ring;
  for (int i = 0; i < 24; ++i) {
    const double a = 2 * M_PI * i / 24;
    ring.insert(ring.end(), {std::cos(a), std::sin(a), 0.0});
  }
  CHECK(density_loss(Tensord({24, 3}, ring), 2).item() < 1e-12);
  std::vector<double> clustered;
  for (int i = 0; i < 10; ++i) clustered.insert(clustered.end(), {0.01 * i, 0.0, 0.0});
  for (int i = 0; i < 10; ++i) clustered.insert(clustered.end(), {1.0 + 0.5 * i, 0.0, 0.0});
  CHECK(density_loss(Tensord({20, 3}, clustered), 3).item() > 0);
  CHECK_THROWS_AS((void)density_loss(Tensord::zeros({4, 3}), 4), InvalidInput);
}

TEST_CASE("adversarial losses") {
  CHECK(gen_adv_loss(Tensord::ones({4})).item() == 0.0);
  CHECK(gen_adv_loss(Tensord::zeros({4})).item() == 1.0);
  CHECK(gen_adv_loss(Tensord({2}, {0.5, 1.5})).item() == doctest::Approx(0.25));
  CHECK(disc_loss(Tensord::ones({3}), Tensord::zeros({3})).item() == 0.0);
  CHECK(disc_loss(Tensord::zeros({3}), Tensord::ones({3})).item() == 2.0);
  // real {0.5, 1}: mean(0.25, 0) = 0.125; fake {0.2, -0.4}: mean(0.04, 0.16) = 0.1
  CHECK(disc_loss(Tensord({2}, {0.5, 1.0}), Tensord({2}, {0.2, -0.4})).item() == doctest::Approx(0.225));
}

TEST_CASE("total generator loss") {
  const auto s = [](double v) { return Tensord::scalar(v); };
  CHECK(total_gen_loss(s(1), s(2), s(3), s(4), LossWeights{0, 0, 0, 0}).item() == 0.0);
  CHECK(total_gen_loss(s(1), s(2), s(3), s(4), LossWeights{}).item() == 10.0);
  const LossWeights d;
  CHECK(d.alpha_part == 1.0);
  CHECK(d.alpha_rend == 1.0);
  CHECK(d.alpha_dens == 1.0);
  CHECK(d.alpha_gen == 1.0);
}

TEST_CASE("metrics properties") {
  std::mt19937_64 rng(23);
  const auto a = cloud_of(test::random_tensor(rng, {40, 3}));
  const auto b = cloud_of(test::random_tensor(rng, {30, 3}));
  const auto self = evaluate(a, a);
  CHECK(self.cd_l2 == 0.0);
  CHECK(self.uhd == 0.0);

  PointCloud sub(std::vector<Vec3>(a.positions.begin(), a.positions.begin() + 10));
  const auto s = evaluate(sub, a);
  CHECK(s.precision == 0.0);
  CHECK(s.coverage > 0.0);
  CHECK(s.uhd == 0.0);

  const auto ab = evaluate(a, b), ba = evaluate(b, a);
  CHECK(ab.cd_l2 == doctest::Approx(ba.cd_l2).epsilon(1e-12));
  CHECK(ab.precision == doctest::Approx(ba.coverage).epsilon(1e-12));

  const double k = 4.0;
  PointCloud as, bs;
  for (const auto& p : a.positions) as.positions.push_back(k * p);
  for (const auto& p : b.positions) bs.positions.push_back(k * p);
  const auto scaled = evaluate(as, bs);
  CHECK(scaled.cd_l2 == doctest::Approx(k * k * ab.cd_l2).epsilon(1e-12));
  CHECK(scaled.uhd == doctest::Approx(k * ab.uhd).epsilon(1e-12));
}

TEST_CASE("loss gradients pass grad_check") {
  std::mt19937_64 rng(24);
  const auto target = test::random_tensor(rng, {12, 3});
  const auto x = separated_cloud(rng, 16);
  SUBCASE("ucd wrt both clouds") {
    CHECK(grad_check([&](const Tensord& p) { return ucd(p, target); }, x).max_rel_error < 1e-3);
    CHECK(grad_check([&](const Tensord& p) { return ucd(target, p); }, x).max_rel_error < 1e-3);
    CHECK(grad_check([&](const Tensord& p) { return ucd(p, target, true); }, x).max_rel_error < 1e-3);
  }
  SUBCASE("rendering loss") {
    const auto s0 = test::random_tensor(rng, {5, 5}, 0, 1);
    const auto sc = test::random_tensor(rng, {5, 5}, 0, 1);
    const auto so = test::random_tensor(rng, {5, 5}, 0, 1);
    CHECK(grad_check([&](const Tensord& p) { return rendering_loss(s0, p, sc); }, so).max_rel_error < 1e-3);
    // The mask depends on s_c; perturbations are far smaller than the margin to 0.5.
    CHECK(grad_check([&](const Tensord& p) { return rendering_loss(s0, so, p); }, sc).max_rel_error < 1e-3);
  }
  SUBCASE("density loss") {
    CHECK(grad_check([&](const Tensord& p) { return density_loss(p, 4); }, x).max_rel_error < 1e-3);
  }
  SUBCASE("total generator loss") {
    const LossWeights w{0.5, 2.0, 1.5, 0.25};
    auto fn = [&](const Tensord& p) {
      return total_gen_loss(ucd(p, target), sum_all(square(p)), density_loss(p, 4),
                            gen_adv_loss(mean(p, 1)), w);
    };
    CHECK(grad_check(fn, x).max_rel_error < 1e-3);
  }
}

TEST_CASE("metric reports") {
  const auto dir = std::filesystem::temp_directory_path() / "scanfill_metrics_test";
  std::filesystem::create_directories(dir);
  std::vector<MetricRow> rows{{"a", "table", {3e-4, 1e-4, 2e-4, 1e-4, 0.05}},
                              {"b", "table", {5e-4, 2e-4, 3e-4, 2e-4, 0.07}},
                              {"c", "lamp", {1e-4, 0.5e-4, 0.5e-4, 0.5e-4, 0.02}}};
  write_metrics_csv(dir / "m.csv", rows);
  write_metrics_summary(dir / "s.json", rows);
  std::ifstream csv(dir / "m.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "sample_id,cd_l2,precision,coverage,ucd,uhd");
  double sum = 0;
  int n = 0;
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::string id, v;
    std::getline(ss, id, ',');
    std::getline(ss, v, ',');
    sum += std::stod(v);
    ++n;
  }
  CHECK(n == 3);
  std::ifstream js(dir / "s.json");
  const auto j = nlohmann::json::parse(js);
  CHECK(std::abs(j["overall"]["cd_l2"].get<double>() - 1e4 * sum / 3) < 1e-12);
  CHECK(j["categories"]["table"]["count"] == 2);
  std::filesystem::remove_all(dir);
}
