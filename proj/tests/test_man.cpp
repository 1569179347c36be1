#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "scanfill/gradcheck.hpp"
#include "scanfill/image_io.hpp"
#include "scanfill/losses.hpp"
#include "scanfill/man.hpp"
#include "scanfill/optim.hpp"
#include "test_support.hpp"

using namespace scanfill;
using namespace scanfill::ad;

namespace {

void randomize(Tensord& t, std::mt19937_64& rng, double scale) {
  auto v = t.mutable_data();
  for (auto& x : v) x = test::uniform(rng, 1, -scale, scale)[0];
}

// Fills a tiny dataset tree with random depth maps, written in shuffled order.
std::vector<Image> fake_train_split(const std::filesystem::path& root, const std::vector<std::string>& ids) {
  std::mt19937_64 rng(1);
  std::vector<Image> maps;
  for (const auto& id : ids) {
    Image m(8, 6);
    for (auto& v : m.data) v = static_cast<float>(test::uniform(rng, 1, 0, 3)[0]);
    std::filesystem::create_directories(root / "lamp" / "train" / id);
    write_pfm(root / "lamp" / "train" / id / "depth.pfm", m);
    maps.push_back(m);
  }
  return maps;
}

}  // namespace

TEST_CASE("discriminator structure") {
  const Discriminator<double> d({}, 64, 64, 3);
  CHECK(d.conv_weight.size() == 5);
  const std::size_t channels[] = {16, 32, 64, 128, 256};
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(d.conv_weight[i].shape() == Shape{channels[i], i == 0 ? 1 : channels[i - 1], 4, 4});
  }
  std::mt19937_64 rng(4);
  const auto maps = test::random_tensor(rng, {3, 64, 64}, 0, 1);
  SUBCASE("zero-initialised head scores every map 0") {
    const auto s = d(maps);
    CHECK(s.shape() == Shape{3});
    for (double v : s.data()) CHECK(v == 0.0);
  }
  SUBCASE("one score per map, equivariant to batch order") {
    Discriminator<double> e = d;
    randomize(e.head.weight, rng, 0.5);
    const auto s = e(maps);
    for (std::size_t b : {1, 2, 5}) CHECK(e(test::random_tensor(rng, {b, 64, 64}, 0, 1)).size() == b);
    const std::vector<std::size_t> perm{2, 0, 1};
    const auto s2 = e(gather_rows(maps, perm, Shape{3}));
    for (std::size_t i = 0; i < 3; ++i) CHECK(s2.data()[i] == doctest::Approx(s.data()[perm[i]]).epsilon(1e-12));
    for (double v : s.data()) CHECK(std::isfinite(v));
  }
  SUBCASE("resolution mismatch") {
    CHECK_THROWS_AS(d(Tensord::zeros({1, 32, 64})), ShapeError);
    CHECK_THROWS_AS(d(Tensord::zeros({64, 64})), ShapeError);
    CHECK_THROWS_AS(Discriminator<double>({}, 16, 16, 0), ConfigError);
  }
}

TEST_CASE("discriminator gradients") {
  Discriminator<double> d({}, 32, 32, 5);
  std::mt19937_64 rng(6);
  randomize(d.head.weight, rng, 0.5);
  const auto maps = test::random_tensor(rng, {2, 32, 32}, 0, 1);
  std::vector<std::size_t> coords;
  for (std::size_t i = 0; i < maps.size(); i += 37) coords.push_back(i);
  SUBCASE("w.r.t. input maps") {
    const auto r = grad_check([&](const Tensord& m) { return gen_adv_loss(d(m)); }, maps, 1e-5, coords);
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("w.r.t. parameters") {
    const auto fake = test::random_tensor(rng, {2, 32, 32}, 0, 1);
    // First-layer weights reach every activation, so a wide step crosses leaky-relu kinks.
    for (std::size_t layer : {0, 2, 4}) {
      std::vector<std::size_t> c;
      const std::size_t stride = d.conv_weight[layer].size() / 24 + 1;
      for (std::size_t i = 0; i < d.conv_weight[layer].size(); i += stride) c.push_back(i);
      const auto r = grad_check(
          [&](const Tensord& w) {
            Discriminator<double> e = d;
            e.conv_weight[layer] = w;
            return disc_loss(e(maps), e(fake));
          },
          d.conv_weight[layer], 1e-6, c);
      INFO("layer ", layer, " worst ", r.worst_index, " a=", r.analytic, " n=", r.numeric);
      // Entries near 1e-5 sit at the rounding floor of a 1e-6 central difference.
      CHECK((r.max_rel_error < 1e-4 || std::abs(r.analytic - r.numeric) < 1e-9));
    }
  }
}

TEST_CASE("discriminator separates two map families") {
  Discriminator<float> d({}, 32, 32, 7);
  Adam<float> opt(nn::parameters(d), AdamConfig{1e-3});
  std::mt19937_64 rng(8);
  // Real: a centred disc at random depth. Fake: uniform noise.
  auto family = [&](bool real, std::size_t b) {
    std::vector<float> v(b * 32 * 32);
    for (std::size_t k = 0; k < b; ++k) {
      const double depth = test::uniform(rng, 1, 0.3, 0.9)[0];
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x)
          v[k * 1024 + y * 32 + x] = real ? (std::hypot(x - 15.5, y - 15.5) < 10 ? static_cast<float>(depth) : 0.0f)
                                          : static_cast<float>(test::uniform(rng, 1, 0, 1)[0]);
    }
    return Tensorf({b, 32, 32}, std::move(v));
  };
  double loss = 1e9;
  int step = 0;
  for (; step < 500 && loss >= 0.1; ++step) {
    Tape tape;
    Tensorf l;
    {
      TapeGuard guard(tape);
      l = disc_loss(d(family(true, 4)), d(family(false, 4)));
      backward(l);
    }
    loss = l.item();
    opt.step();
  }
  MESSAGE("separable toy reached disc_loss ", loss, " after ", step, " steps");
  CHECK(loss < 0.1);
}

TEST_CASE("image bank") {
  const auto root = test::scratch_dir("bank");
  const std::vector<std::string> ids{"0007", "0002", "0010", "0001"};
  const auto maps = fake_train_split(root, ids);
  const auto bank = build_bank(root, "lamp");
  CHECK(bank.size() == 4);
  CHECK(bank.sample_ids == std::vector<std::string>{"0001", "0002", "0007", "0010"});
  CHECK(bank.maps[0].data == maps[3].data);  // bit-for-bit
  CHECK(bank.map_paths[2] == "train/0007/depth.pfm");
  CHECK(build_bank(root, "lamp").sample_ids == bank.sample_ids);

  ImageBank with_eta = bank;
  with_eta.eta = 0.0123;
  with_eta.r0 = 0.03;
  with_eta.m_points = 1024;
  write_bank_manifest(root / "lamp" / "bank.json", with_eta);
  const auto back = read_bank(root / "lamp");
  CHECK(back.sample_ids == bank.sample_ids);
  CHECK(back.eta == 0.0123);
  CHECK(back.m_points == 1024);
  for (std::size_t i = 0; i < 4; ++i) CHECK(back.maps[i].data == bank.maps[i].data);

  std::filesystem::remove(root / "lamp" / "train" / "0002" / "depth.pfm");
  CHECK_THROWS_WITH_AS(build_bank(root, "lamp"), doctest::Contains("0002"), IoError);
  CHECK_THROWS_WITH_AS(read_bank(root / "lamp"), doctest::Contains("0002"), IoError);
  CHECK_THROWS_AS(build_bank(root, "table"), IoError);
}

TEST_CASE("real map sampling") {
  const auto root = test::scratch_dir("bank_sampling");
  fake_train_split(root, {"a", "b", "c", "d", "e"});
  const auto bank = build_bank(root, "lamp");
  SUBCASE("a full batch is a permutation of the bank") {
    std::mt19937_64 rng(1);
    const auto batch = sample_real<double>(bank, rng, 5, 2.0);
    CHECK(batch.shape() == Shape{5, 6, 8});
    std::set<std::size_t> seen;
    for (std::size_t k = 0; k < 5; ++k) {
      for (std::size_t i = 0; i < 5; ++i) {
        bool same = true;
        for (std::size_t p = 0; p < 48 && same; ++p)
          same = std::abs(batch.data()[k * 48 + p] - bank.maps[i].data[p] / 3.0) < 1e-12;
        if (same) seen.insert(i);
      }
    }
    CHECK(seen.size() == 5);
    for (double v : batch.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  SUBCASE("fixed seed reproduces the draw") {
    std::mt19937_64 a(9), b(9);
    const auto x = sample_real<float>(bank, a, 3, 2.0), y = sample_real<float>(bank, b, 3, 2.0);
    CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  }
  SUBCASE("epoch stream never repeats within a pass") {
    RealSampler s(5, 3);
    std::vector<std::size_t> pass;
    for (int i = 0; i < 5; ++i) pass.push_back(s.next(1)[0]);
    std::sort(pass.begin(), pass.end());
    CHECK(pass == std::vector<std::size_t>{0, 1, 2, 3, 4});
    CHECK_THROWS_AS(s.next(6), InvalidInput);
  }
  SUBCASE("errors") {
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(sample_real<double>(bank, rng, 6, 2.0), InvalidInput);
    CHECK_THROWS_AS(sample_real<double>(ImageBank{}, rng, 1, 2.0), InvalidInput);
    CHECK_THROWS_AS(RealSampler(0, 1), InvalidInput);
  }
  SUBCASE("depth normalisation") {
    const auto d = normalize_depth(Tensord({2}, {3.0, 1.5}), 2.0);
    CHECK(d.data()[0] == 1.0);
    CHECK(d.data()[1] == 0.5);
  }
}
