#include "scanfill/gradsuite.hpp"

#include <cmath>
#include <functional>
#include <random>

#include "scanfill/errors.hpp"
#include "scanfill/gradcheck.hpp"
#include "scanfill/losses.hpp"
#include "scanfill/man.hpp"
#include "scanfill/prn.hpp"
#include "scanfill/renderer.hpp"

namespace scanfill {

using ad::Shape;
using ad::Tensord;
using namespace ad;

namespace {

struct Check {
  std::string name;
  double tolerance;
  // Returns the point and the scalar function of it.
  std::function<std::pair<Tensord, std::function<Tensord(const Tensord&)>>()> setup;
};

Tensord uniform(std::mt19937_64& rng, Shape shape, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensord(std::move(shape), std::move(v));
}

// Magnitudes in [0.2, 1] with random signs: clear of the kinks at 0.
Tensord signed_away_from_zero(std::mt19937_64& rng, Shape shape) {
  auto t = uniform(rng, std::move(shape), 0.2, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (auto& x : t.mutable_data())
    if (flip(rng)) x = -x;
  return t;
}

// Random linear functional of a tensor-valued op, so every output entry matters.
std::function<Tensord(const Tensord&)> weighted(std::mt19937_64& rng, Shape out,
                                                std::function<Tensord(const Tensord&)> op) {
  const Tensord w = uniform(rng, std::move(out));
  return [w, op](const Tensord& x) { return sum_all(mul(op(x), w)); };
}

Camera front_camera(std::size_t size) {
  return look_at(Vec3(0, 0, 2), Vec3::Zero(), Vec3::UnitY(), static_cast<double>(size), size, size);
}

// Four points whose splat boundaries keep at least 0.005 px from every pixel
// centre, so small perturbations never change coverage.
Tensord interior_points(std::mt19937_64& rng, const Camera& cam, const SplatConfig& splat) {
  const double r = splat.radius_px(cam.width, cam.height);
  for (;;) {
    const auto pts = uniform(rng, {4, 3}, -0.4, 0.4);
    const auto proj = project(pts, cam).data();
    bool ok = true;
    for (std::size_t i = 0; i < 4 && ok; ++i)
      for (std::size_t v = 0; v < cam.height && ok; ++v)
        for (std::size_t u = 0; u < cam.width && ok; ++u)
          ok = std::abs(std::hypot(u + 0.5 - proj[i * 3], v + 0.5 - proj[i * 3 + 1]) - r) >= 0.005;
    if (ok) return pts;
  }
}

PrnConfig tiny_prn() {
  PrnConfig c;
  c.n_in = 32;
  c.n_coarse = 16;
  c.m_out = 64;
  c.l_retrieve = 4;
  c.global_dim = 16;
  c.decoder_hidden = 24;
  c.attention_hidden = 4;
  c.refine_hidden = 16;
  c.encodings.k_position = 6;
  c.encodings.k_curvature = 8;
  return c;
}

std::vector<Check> build_checks() {
  using Fn = std::function<Tensord(const Tensord&)>;
  using Setup = std::pair<Tensord, Fn>;
  std::vector<Check> checks;
  auto add = [&](std::string name, double tol, std::function<Setup(std::mt19937_64&)> s) {
    const std::uint64_t seed = 1000 + checks.size();
    checks.push_back({std::move(name), tol, [s, seed] {
                        std::mt19937_64 rng(seed);
                        return s(rng);
                      }});
  };

  add("elementwise arithmetic", 1e-4, [](std::mt19937_64& rng) {
    const Tensord other = uniform(rng, {3, 4}), denom = uniform(rng, {3, 4}, 0.5, 2.0);
    return Setup{uniform(rng, {3, 4}), weighted(rng, {3, 4}, [=](const Tensord& x) {
                   return ad::add(mul(x, sub(other, x)), div(square(x), denom));
                 })};
  });
  add("transcendental", 1e-4, [](std::mt19937_64& rng) {
    return Setup{uniform(rng, {6}, 0.2, 2.0), weighted(rng, {6}, [](const Tensord& x) {
                   return ad::add(ad::add(ad::tanh(x), ad::exp(mul_scalar(x, 0.5))),
                                  ad::add(ad::log(x), pow_scalar(ad::sqrt(x), 1.5)));
                 })};
  });
  add("relu and leaky relu", 1e-4, [](std::mt19937_64& rng) {
    return Setup{signed_away_from_zero(rng, {8}), weighted(rng, {8}, [](const Tensord& x) {
                   return ad::add(relu(x), leaky_relu(x, 0.2));
                 })};
  });
  add("matmul", 1e-4, [](std::mt19937_64& rng) {
    const Tensord right = uniform(rng, {4, 3});
    return Setup{uniform(rng, {5, 4}), weighted(rng, {5, 3}, [=](const Tensord& x) { return matmul(x, right); })};
  });
  add("softmax", 1e-4, [](std::mt19937_64& rng) {
    return Setup{uniform(rng, {3, 5}), weighted(rng, {3, 5}, [](const Tensord& x) { return softmax(x, -1); })};
  });
  add("shape ops", 1e-4, [](std::mt19937_64& rng) {
    return Setup{uniform(rng, {3, 4}), weighted(rng, {4, 6}, [](const Tensord& x) {
                   const auto joined = concat<double>({transpose(x), reshape(x, {4, 3})}, 1);  // 4 x 6
                   return gather_rows(joined, {3, 0, 1, 3}, {4});
                 })};
  });
  add("reductions", 1e-4, [](std::mt19937_64& rng) {
    return Setup{uniform(rng, {4, 5}), weighted(rng, {4}, [](const Tensord& x) {
                   return ad::add(ad::add(sum(x, 1), mean(x, 1)), ad::add(ad::max(x, 1), ad::min(x, 1)));
                 })};
  });
  add("conv2d", 1e-4, [](std::mt19937_64& rng) {
    const Tensord weight = uniform(rng, {3, 2, 4, 4}), bias = uniform(rng, {3});
    return Setup{uniform(rng, {1, 2, 8, 8}),
                 weighted(rng, {1, 3, 4, 4}, [=](const Tensord& x) { return conv2d(x, weight, bias, 2, 1); })};
  });
  add("top-k selection", 1e-4, [](std::mt19937_64& rng) {
    return Setup{uniform(rng, {3, 7}), weighted(rng, {3, 3}, [](const Tensord& x) { return topk(x, 3).values; })};
  });
  add("attention weights", 1e-4, [](std::mt19937_64& rng) {
    ProjectionMlp<double> q{nn::Linear<double>(1, 4, rng), nn::Linear<double>(4, 1, rng)};
    ProjectionMlp<double> k{nn::Linear<double>(1, 4, rng), nn::Linear<double>(4, 1, rng)};
    const Tensord f_c = uniform(rng, {5, 1}, 0, 1);
    return Setup{uniform(rng, {7, 1}, 0, 1),
                 weighted(rng, {5, 7}, [=](const Tensord& f_in) { return attention_weights(q, k, f_c, f_in); })};
  });
  add("unidirectional chamfer", 1e-4, [](std::mt19937_64& rng) {
    const Tensord target = uniform(rng, {12, 3});
    return Setup{uniform(rng, {16, 3}),
                 [=](const Tensord& x) { return ad::add(ucd(x, target), ucd(target, x, true)); }};
  });
  add("partial matching loss", 1e-4, [](std::mt19937_64& rng) {
    const Tensord p_in = uniform(rng, {10, 3}), p_c = uniform(rng, {8, 3});
    return Setup{uniform(rng, {16, 3}), [=](const Tensord& x) { return partial_matching_loss(p_in, p_c, x); }};
  });
  add("rendering loss", 1e-4, [](std::mt19937_64& rng) {
    const Tensord s0 = uniform(rng, {6, 6}, 0, 1), s_c = uniform(rng, {6, 6}, 0, 1);
    return Setup{uniform(rng, {6, 6}, 0, 1), [=](const Tensord& x) {
                   return ad::add(rendering_loss(s0, x, s_c), rendering_loss(s0, s_c, x));
                 }};
  });
  add("density loss", 1e-4, [](std::mt19937_64& rng) {
    return Setup{uniform(rng, {16, 3}), [](const Tensord& x) { return density_loss(x, 4); }};
  });
  add("adversarial losses", 1e-4, [](std::mt19937_64& rng) {
    const Tensord real = uniform(rng, {4});
    return Setup{uniform(rng, {4}), [=](const Tensord& x) { return ad::add(gen_adv_loss(x), disc_loss(real, x)); }};
  });
  add("total generator loss", 1e-4, [](std::mt19937_64& rng) {
    const Tensord target = uniform(rng, {12, 3});
    const LossWeights w{0.5, 2.0, 1.5, 0.25};
    return Setup{uniform(rng, {16, 3}), [=](const Tensord& p) {
                   return total_gen_loss(ucd(target, p), mean_all(square(p)), density_loss(p, 4),
                                         gen_adv_loss(mean(p, 1)), w);
                 }};
  });
  add("pinhole projection", 1e-4, [](std::mt19937_64& rng) {
    const Camera cam = front_camera(32);
    return Setup{uniform(rng, {6, 3}, -0.5, 0.5),
                 weighted(rng, {6, 3}, [=](const Tensord& x) { return project(x, cam); })};
  });
  add("silhouette rendering", 1e-3, [](std::mt19937_64& rng) {
    const Camera cam = front_camera(16);
    SplatConfig splat;
    splat.radius = 0.3;
    splat.gamma = 2.0;
    const Tensord pts = interior_points(rng, cam, splat);
    return Setup{pts, weighted(rng, {16, 16}, [=](const Tensord& x) { return render_silhouette(x, cam, splat); })};
  });
  add("depth rendering", 1e-4, [](std::mt19937_64& rng) {
    const Camera cam = front_camera(16);
    SplatConfig splat;
    splat.radius = 0.3;
    const Tensord pts = interior_points(rng, cam, splat);
    return Setup{pts, weighted(rng, {16, 16}, [=](const Tensord& x) { return render_depth(x, cam, splat); })};
  });
  add("coarse decoder", 1e-4, [](std::mt19937_64& rng) {
    const Prn<double> g(tiny_prn(), 7);
    return Setup{uniform(rng, {1, 16}), [g](const Tensord& o) { return mean_all(g.decode_coarse(o)); }};
  });
  add("refiner parameters", 1e-4, [](std::mt19937_64& rng) {
    Prn<double> g(tiny_prn(), 8);
    g.ref3.weight = uniform(rng, g.ref3.weight.shape(), -0.5, 0.5);
    const Tensord p_in = uniform(rng, {32, 3});
    const auto base = g.forward(p_in);
    const auto frozen = std::make_shared<PatternEncodings>(base.coarse_encodings);
    return Setup{g.ref3.weight, [g, p_in, frozen](const Tensord& w) {
                   Prn<double> m = g;
                   m.ref3.weight = w;
                   return ucd(p_in, m.forward(p_in, {nullptr, frozen.get(), std::nullopt}).out);
                 }};
  });
  add("discriminator input", 1e-4, [](std::mt19937_64& rng) {
    Discriminator<double> d({}, 32, 32, 9);
    d.head.weight = uniform(rng, d.head.weight.shape(), -0.5, 0.5);
    return Setup{uniform(rng, {1, 32, 32}, 0, 1), [d](const Tensord& m) { return gen_adv_loss(d(m)); }};
  });
  return checks;
}

}  // namespace

std::vector<std::string> gradient_suite_names() {
  std::vector<std::string> names;
  for (const auto& c : build_checks()) names.push_back(c.name);
  return names;
}

std::vector<GradSuiteRow> run_gradient_suite(const std::string& corrupt) {
  const auto checks = build_checks();
  if (!corrupt.empty()) {
    bool known = false;
    for (const auto& c : checks) known = known || c.name == corrupt;
    if (!known) throw ConfigError("gradcheck: no check named '" + corrupt + "'");
  }
  std::vector<GradSuiteRow> rows;
  for (const auto& c : checks) {
    auto [point, fn] = c.setup();
    if (c.name == corrupt) fn = [inner = fn](const Tensord& x) { return inner(scale_gradient(x, 1.5)); };
    const auto r = grad_check(fn, point);
    rows.push_back({c.name, r.max_rel_error, c.tolerance, r.max_rel_error < c.tolerance});
  }
  return rows;
}

}  // namespace scanfill
