#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <string>

#include "scanfill/ops.hpp"
#include "scanfill/trainer.hpp"
#include "test_support.hpp"

using namespace scanfill;
namespace fs = std::filesystem;

namespace {

// Small 32x32 lamp dataset shared by every case; built once.
const fs::path& dataset() {
  static const fs::path root = [] {
    DatasetConfig c;
    c.root = test::scratch_dir("trainer_data");
    c.categories = {Category::lamp};
    c.n_train = 6;
    c.n_val = 1;
    c.n_test = 1;
    c.m_gt = 256;
    c.m_out = 128;
    c.scan.width = c.scan.height = 32;
    c.scan.n_in = 48;
    c.seed = 3;
    build_dataset(c);
    return c.root;
  }();
  return root;
}

TrainConfig small_config(const std::string& out) {
  TrainConfig c;
  c.root = dataset();
  c.category = "lamp";
  c.out_dir = test::scratch_dir(out);
  c.prn.n_in = 48;
  c.prn.n_coarse = 32;
  c.prn.m_out = 128;
  c.prn.l_retrieve = 4;
  c.prn.global_dim = 32;
  c.prn.decoder_hidden = 64;
  c.prn.refine_hidden = 32;
  c.prn.encodings.k_position = 8;
  c.prn.encodings.k_curvature = 8;
  c.disc.channels = {4, 4, 8, 8, 8};
  c.batch_size = 4;
  c.epochs = 2;
  c.lr = 1e-3;
  c.seed = 11;
  return c;
}

std::size_t csv_rows(const fs::path& p) {
  std::ifstream is(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) ++n;
  return n - 1;
}

bool same_record(const EpochRecord& a, const EpochRecord& b) {
  return a.epoch == b.epoch && a.l_part == b.l_part && a.l_rend == b.l_rend && a.l_dens == b.l_dens &&
         a.l_gen == b.l_gen && a.l_disc == b.l_disc && a.ucd_out == b.ucd_out;
}

}  // namespace

TEST_CASE("two-epoch smoke run") {
  auto c = small_config("trainer_smoke");
  Trainer t(c);
  CHECK(t.samples().size() == 6);
  const auto records = t.train();
  REQUIRE(records.size() == 2);
  CHECK(csv_rows(c.out_dir / "losses.csv") == 2);
  CHECK(fs::exists(final_checkpoint_path(c.out_dir)));
  for (const auto& r : records) {
    for (double v : {r.l_part, r.l_rend, r.l_dens, r.l_gen, r.l_disc, r.ucd_out}) {
      CHECK(std::isfinite(v));
      CHECK(v >= 0);
    }
  }
  CHECK(records[1].epoch == 2);
  CHECK(records[0].l_disc > 0);

  Prn<float> g(c.prn, 999);
  load_generator(g, final_checkpoint_path(c.out_dir));
  CHECK(parameter_hash(g) == parameter_hash(t.generator()));
}

TEST_CASE("max_samples limits the split") {
  auto c = small_config("trainer_limit");
  c.max_samples = 3;
  Trainer t(c);
  CHECK(t.samples().size() == 3);
  CHECK(t.samples()[2].id == "0002");
}

TEST_CASE("resume reproduces the next epoch bit for bit") {
  auto c = small_config("trainer_resume");
  c.epochs = 3;
  c.checkpoint_every = 2;
  Trainer full(c);
  const auto records = full.train();
  REQUIRE(records.size() == 3);
  REQUIRE(fs::exists(checkpoint_path(c.out_dir, 2)));

  Trainer resumed(c);
  resumed.load(checkpoint_path(c.out_dir, 2));
  CHECK(resumed.epoch() == 2);
  const auto tail = resumed.train();
  REQUIRE(tail.size() == 1);
  CHECK(same_record(tail[0], records[2]));
  CHECK(parameter_hash(resumed.generator()) == parameter_hash(full.generator()));
  CHECK(parameter_hash(resumed.discriminator()) == parameter_hash(full.discriminator()));
  CHECK(csv_rows(c.out_dir / "losses.csv") == 3);
}

TEST_CASE("fixed seed gives identical runs") {
  auto a = small_config("trainer_det_a");
  auto b = small_config("trainer_det_b");
  const auto ra = Trainer(a).train();
  const auto rb = Trainer(b).train();
  for (std::size_t i = 0; i < ra.size(); ++i) CHECK(same_record(ra[i], rb[i]));
  b.seed = 12;
  b.out_dir = test::scratch_dir("trainer_det_c");
  CHECK_FALSE(same_record(Trainer(b).train()[0], ra[0]));
}

TEST_CASE("alpha_gen = 0 decouples the discriminator") {
  auto c = small_config("trainer_nogan");
  c.weights.alpha_gen = 0;
  Trainer t(c);
  const auto d_before = parameter_hash(t.discriminator());
  const auto records = t.train();
  CHECK(parameter_hash(t.discriminator()) == d_before);
  for (const auto& r : records) {
    CHECK(r.l_gen == 0.0);
    CHECK(r.l_disc == 0.0);
  }
  // A different discriminator cannot change the generator update.
  auto other = c;
  other.out_dir = test::scratch_dir("trainer_nogan_b");
  other.disc.channels = {8, 8, 8, 16, 16};
  Trainer u(other);
  const auto records_u = u.train();
  CHECK(parameter_hash(u.generator()) == parameter_hash(t.generator()));
  for (std::size_t i = 0; i < records.size(); ++i) CHECK(same_record(records[i], records_u[i]));
}

TEST_CASE("discriminator update leaves the generator untouched") {
  auto c = small_config("trainer_detach");
  Trainer t(c);
  auto& g = t.generator();
  auto& d = t.discriminator();
  ad::Adam<float> opt_d(nn::parameters(d), ad::AdamConfig{1e-2});
  const auto& s = t.samples()[0];
  ad::Tape tape;
  ad::TapeGuard guard(tape);
  const auto out = g.forward(s.p_in);
  const auto depth = render_depth_dare(out.out, t.fake_view(1, 0), c.splat, t.bank().eta);
  const auto fake = ad::reshape(normalize_depth(depth, 2.0), ad::Shape{1, 32, 32});
  const auto g_before = parameter_hash(g), d_before = parameter_hash(d);
  {
    ad::Tape d_tape;
    ad::TapeGuard d_guard(d_tape);
    const auto real = stack_real<float>(t.bank(), {0}, 2.0);
    ad::backward(disc_loss(d(real), d(fake.detach())));
    opt_d.step();
  }
  CHECK(parameter_hash(g) == g_before);
  CHECK(parameter_hash(d) != d_before);
  g.visit([](const std::string& name, ad::Tensorf& p) {
    CAPTURE(name);
    CHECK_FALSE(p.has_grad());
  });
}

TEST_CASE("adversarial viewpoints") {
  auto c = small_config("trainer_views");
  Trainer t(c);
  std::set<std::pair<double, double>> eyes;
  for (std::size_t e = 1; e <= 5; ++e) {
    const Vec3 eye = t.fake_view(e, 0).center();
    eyes.emplace(eye.x(), eye.z());
    CHECK(std::abs(std::asin(eye.y() / eye.norm())) <= std::numbers::pi / 6 + 1e-12);
    CHECK(t.fake_view(e, 0).rotation == t.fake_view(e, 0).rotation);
  }
  CHECK(eyes.size() == 5);
  CHECK(t.fake_view(1, 0).rotation != t.fake_view(1, 1).rotation);
}

TEST_CASE("non-finite loss aborts with the sample id") {
  auto c = small_config("trainer_nan");
  Trainer t(c);
  t.generator().dec3.bias.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(t.run_epoch(), doctest::Contains("at sample 000"), NumericError);
}

TEST_CASE("training never needs ground truth") {
  const auto root = test::scratch_dir("trainer_nogt");
  fs::copy(dataset(), root, fs::copy_options::recursive);
  fs::remove_all(root / "lamp" / "gt");
  auto c = small_config("trainer_nogt_out");
  c.root = root;
  c.epochs = 1;
  CHECK(Trainer(c).train().size() == 1);
}

TEST_CASE("trainer errors") {
  auto c = small_config("trainer_errors");
  c.root = test::scratch_dir("trainer_missing");
  CHECK_THROWS_AS(Trainer{c}, IoError);
  c = small_config("trainer_errors");
  c.prn.n_in = 64;
  c.prn.n_coarse = 64;
  c.prn.m_out = 128;
  CHECK_THROWS_WITH_AS(Trainer{c}, doctest::Contains("prn.n_in"), ShapeError);
  c = small_config("trainer_errors");
  c.batch_size = 0;
  CHECK_THROWS_AS(Trainer{c}, ConfigError);

  Trainer t(small_config("trainer_errors_a"));
  t.save(c.out_dir / "x.ckpt");
  auto bigger = small_config("trainer_errors_b");
  bigger.prn.global_dim = 48;
  Trainer u(bigger);
  CHECK_THROWS_AS(u.load(c.out_dir / "x.ckpt"), ShapeError);
}
