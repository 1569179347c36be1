#include "scanfill/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "scanfill/image_io.hpp"
#include "scanfill/man.hpp"
#include "scanfill/ply.hpp"

namespace scanfill {

namespace {

constexpr double kPi = std::numbers::pi;

constexpr ParamRange kTableRanges[] = {
    {"slab_width", 1.2, 2.0}, {"slab_depth", 0.8, 1.4},  {"slab_thickness", 0.05, 0.12},
    {"leg_radius", 0.04, 0.09}, {"leg_height", 0.6, 1.0}, {"leg_inset", 0.05, 0.15},
};
constexpr ParamRange kLampRanges[] = {
    {"pole_height", 1.0, 1.6},        {"pole_radius", 0.03, 0.06},    {"shade_height", 0.25, 0.45},
    {"shade_bottom_radius", 0.3, 0.5}, {"shade_top_radius", 0.12, 0.28},
};
constexpr ParamRange kHullRanges[] = {
    {"hull_length", 1.5, 2.5},  // semi-axis along x
    {"hull_width", 0.4, 0.7},   // semi-axis along z
    {"hull_depth", 0.3, 0.6},   // semi-axis along -y
};

// One sampled surface patch: its area and a sampler drawing a uniform point on it.
struct Patch {
  double area;
  int part;
  std::function<Vec3(std::mt19937_64&)> sample;
};

double unit(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// Axis-aligned box faces.
void add_box(std::vector<Patch>& patches, const Vec3& center, const Vec3& extent, int part) {
  for (int axis = 0; axis < 3; ++axis) {
    const int a = (axis + 1) % 3, b = (axis + 2) % 3;
    const double area = extent[a] * extent[b];
    for (double side : {-0.5, 0.5}) {
      patches.push_back({area, part, [=](std::mt19937_64& rng) {
                           Vec3 p = center;
                           p[axis] += side * extent[axis];
                           p[a] += (unit(rng) - 0.5) * extent[a];
                           p[b] += (unit(rng) - 0.5) * extent[b];
                           return p;
                         }});
    }
  }
}

// Vertical frustum lateral surface from y0 (radius r0) to y1 (radius r1).
void add_frustum(std::vector<Patch>& patches, const Vec3& base, double y0, double y1, double r0, double r1,
                 int part) {
  const double h = y1 - y0, slant = std::hypot(h, r1 - r0);
  const double rmax = std::max(r0, r1);
  patches.push_back({kPi * (r0 + r1) * slant, part, [=](std::mt19937_64& rng) {
                       double t = 0;
                       do t = unit(rng);  // density proportional to the local radius
                       while (unit(rng) * rmax > r0 + (r1 - r0) * t);
                       const double r = r0 + (r1 - r0) * t, phi = 2 * kPi * unit(rng);
                       return Vec3(base.x() + r * std::cos(phi), y0 + h * t, base.z() + r * std::sin(phi));
                     }});
}

// Horizontal elliptical disc at height y.
void add_disc(std::vector<Patch>& patches, const Vec3& center, double a, double b, int part) {
  patches.push_back({kPi * a * b, part, [=](std::mt19937_64& rng) {
                       const double r = std::sqrt(unit(rng)), phi = 2 * kPi * unit(rng);
                       return Vec3(center.x() + a * r * std::cos(phi), center.y(), center.z() + b * r * std::sin(phi));
                     }});
}

// Lower half of an ellipsoid with semi-axes (a along x, c along y, b along z).
void add_half_ellipsoid(std::vector<Patch>& patches, double a, double b, double c, int part) {
  constexpr double p = 1.6075;  // Knud Thomsen surface-area approximation
  const double full = 4 * kPi * std::pow((std::pow(a * c, p) + std::pow(a * b, p) + std::pow(c * b, p)) / 3, 1 / p);
  const double wmax = std::max({c * b, a * b, a * c});
  patches.push_back({full / 2, part, [=](std::mt19937_64& rng) {
                       std::normal_distribution<double> g;
                       for (;;) {
                         Vec3 n(g(rng), g(rng), g(rng));
                         if (!(n.norm() > 1e-12)) continue;
                         n.normalize();
                         n.y() = -std::abs(n.y());
                         // Area element of the map from the unit sphere.
                         const double w = std::sqrt(std::pow(c * b * n.x(), 2) + std::pow(a * b * n.y(), 2) +
                                                    std::pow(a * c * n.z(), 2));
                         if (unit(rng) * wmax <= w) return Vec3(a * n.x(), c * n.y(), b * n.z());
                       }
                     }});
}

std::vector<Patch> build_patches(const ShapeSpec& s) {
  const auto& q = s.params;
  std::vector<Patch> patches;
  switch (s.category) {
    case Category::table: {
      const double w = q.at("slab_width"), d = q.at("slab_depth"), t = q.at("slab_thickness");
      const double r = q.at("leg_radius"), h = q.at("leg_height"), inset = q.at("leg_inset");
      add_box(patches, Vec3(0, h + t / 2, 0), Vec3(w, t, d), 0);
      const double lx = w / 2 - inset - r, lz = d / 2 - inset - r;
      int part = 1;
      for (double sx : {-1.0, 1.0}) {
        for (double sz : {-1.0, 1.0}) {
          const Vec3 base(sx * lx, 0, sz * lz);
          add_frustum(patches, base, 0, h, r, r, part);
          add_disc(patches, base, r, r, part);
          ++part;
        }
      }
      break;
    }
    case Category::lamp: {
      const double ph = q.at("pole_height"), pr = q.at("pole_radius"), sh = q.at("shade_height");
      add_frustum(patches, Vec3::Zero(), 0, ph, pr, pr, 0);
      add_disc(patches, Vec3::Zero(), pr, pr, 0);
      add_frustum(patches, Vec3::Zero(), ph - sh / 2, ph + sh / 2, q.at("shade_bottom_radius"),
                  q.at("shade_top_radius"), 1);
      break;
    }
    case Category::hull: {
      const double a = q.at("hull_length"), b = q.at("hull_width"), c = q.at("hull_depth");
      add_half_ellipsoid(patches, a, b, c, 0);
      add_disc(patches, Vec3::Zero(), a, b, 1);
      break;
    }
  }
  return patches;
}

// Keeps the first exception raised inside a parallel loop.
template <typename F>
void capture(std::exception_ptr& slot, F&& f) {
  try {
    f();
  } catch (...) {
#pragma omp critical(scanfill_capture)
    if (!slot) slot = std::current_exception();
  }
}

}  // namespace

const char* const kSplits[3] = {"train", "val", "test"};

std::string to_string(Category c) {
  switch (c) {
    case Category::table: return "table";
    case Category::lamp: return "lamp";
    case Category::hull: return "hull";
  }
  return "?";
}

Category parse_category(const std::string& name, const std::string& field) {
  for (Category c : {Category::table, Category::lamp, Category::hull})
    if (to_string(c) == name) return c;
  throw ConfigError(field + ": unknown category '" + name + "' (expected table, lamp or hull)");
}

std::span<const ParamRange> parameter_ranges(Category c) {
  switch (c) {
    case Category::table: return kTableRanges;
    case Category::lamp: return kLampRanges;
    case Category::hull: return kHullRanges;
  }
  return {};
}

void ShapeSpec::validate() const {
  const auto ranges = parameter_ranges(category);
  for (const auto& r : ranges) {
    const auto it = params.find(r.name);
    if (it == params.end()) throw InvalidInput(to_string(category) + " spec: missing parameter " + r.name);
    if (!(it->second >= r.lo && it->second <= r.hi)) {
      throw InvalidInput(to_string(category) + " spec: " + r.name + " = " + std::to_string(it->second) +
                         " outside [" + std::to_string(r.lo) + ", " + std::to_string(r.hi) + "]");
    }
  }
  if (params.size() != ranges.size()) throw InvalidInput(to_string(category) + " spec: unknown parameter");
}

ShapeSpec random_spec(Category c, std::mt19937_64& rng) {
  ShapeSpec s;
  s.category = c;
  for (const auto& r : parameter_ranges(c)) s.params[r.name] = r.lo + (r.hi - r.lo) * unit(rng);
  return s;
}

SurfaceSample sample_surface(const ShapeSpec& spec, std::size_t n, std::mt19937_64& rng) {
  spec.validate();
  const auto patches = build_patches(spec);
  std::vector<double> cumulative;
  double total = 0;
  for (const auto& p : patches) cumulative.push_back(total += p.area);
  SurfaceSample out;
  out.cloud.positions.reserve(n);
  out.part.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = unit(rng) * total;
    const auto k = std::min<std::size_t>(
        static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), x) - cumulative.begin()),
        patches.size() - 1);
    out.cloud.positions.push_back(patches[k].sample(rng));
    out.part.push_back(patches[k].part);
  }
  return out;
}

GroundTruth generate_gt(const ShapeSpec& spec, std::size_t m_gt, std::size_t dense_factor, std::uint64_t seed) {
  if (m_gt < 2) throw InvalidInput("generate_gt: m_gt must be at least 2");
  if (dense_factor == 0) throw InvalidInput("generate_gt: dense factor must be at least 1");
  std::mt19937_64 rng(seed);
  auto raw = sample_surface(spec, m_gt, rng);
  const auto norm = normalize_unit_sphere(raw.cloud);
  GroundTruth gt;
  gt.cloud = norm.cloud;
  gt.part = std::move(raw.part);
  gt.dense = apply_normalization(sample_surface(spec, m_gt * dense_factor, rng).cloud, norm.center, norm.scale);
  return gt;
}

Viewpoint choose_viewpoint(const PointCloud& dense, std::mt19937_64& rng, const ScanConfig& config) {
  for (std::size_t attempt = 0; attempt < config.max_attempts; ++attempt) {
    const Camera cam = sample_viewpoint(rng, config.views, config.width, config.height);
    try {
      const std::size_t a = rasterize(dense, cam, config.splat).covered();
      if (a > 0) return {cam, a};
    } catch (const InvalidInput&) {
      // part of the object behind the camera; try another view
    }
  }
  throw InvalidInput("no viewpoint with a visible object after " + std::to_string(config.max_attempts) + " attempts");
}

std::vector<std::size_t> subsample_indices(std::size_t available, std::size_t n, std::mt19937_64& rng,
                                           bool& with_replacement) {
  if (available == 0) throw InvalidInput("cannot subsample an empty set");
  std::vector<std::size_t> idx;
  with_replacement = available < n;
  if (with_replacement) {
    std::uniform_int_distribution<std::size_t> pick(0, available - 1);
    for (std::size_t i = 0; i < n; ++i) idx.push_back(pick(rng));
  } else {
    idx.resize(available);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, available - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(n);
  }
  std::sort(idx.begin(), idx.end());
  return idx;
}

Scan synthesize_scan(const PointCloud& dense, const Camera& camera, const ScanConfig& config, double eta,
                     std::mt19937_64& rng) {
  Scan s;
  s.camera = camera;
  {
    ad::NoGradGuard no_grad;
    s.depth = to_image(render_depth_dare(to_tensor<double>(dense), camera, config.splat, eta));
  }
  s.mask = binarize(s.depth);
  const PointCloud back = backproject(s.depth, camera);
  if (back.empty()) throw InvalidInput("scan has an empty foreground");
  s.backprojected = back.size();
  for (auto i : subsample_indices(back.size(), config.n_in, rng, s.with_replacement)) {
    s.partial.positions.push_back(back.positions[i]);
  }
  return s;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::string sample_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", index);
  return buf;
}

DatasetSummary build_dataset(const DatasetConfig& config) {
  config.scan.splat.validate();
  if (config.categories.empty()) throw ConfigError("data.categories must not be empty");
  if (config.n_train == 0) throw ConfigError("data.n_train must be at least 1");
  namespace fs = std::filesystem;
  DatasetSummary summary;
  const std::size_t counts[3] = {config.n_train, config.n_val, config.n_test};
  const std::size_t total = config.n_train + config.n_val + config.n_test;

  for (std::size_t ci = 0; ci < config.categories.size(); ++ci) {
    const Category cat = config.categories[ci];
    const std::string name = to_string(cat);
    const fs::path cat_dir = config.root / name;
    try {
      for (const char* sub : {"train", "val", "test", "gt"}) fs::remove_all(cat_dir / sub);
      fs::create_directories(cat_dir / "gt");
    } catch (const fs::filesystem_error& e) {
      throw IoError(std::string("cannot prepare ") + cat_dir.string() + ": " + e.what());
    }

    std::exception_ptr error;
    std::vector<std::mt19937_64> rngs(total);
    std::vector<GroundTruth> gts(total);
    std::vector<Viewpoint> views(total);
#pragma omp parallel for schedule(dynamic)
    for (long s = 0; s < static_cast<long>(total); ++s) {
      capture(error, [&] {
        auto& rng = rngs[s];
        rng.seed(derive_seed(config.seed, ci, static_cast<std::uint64_t>(s)));
        const ShapeSpec spec = random_spec(cat, rng);
        gts[s] = generate_gt(spec, config.m_gt, config.dense_factor, rng());
        views[s] = choose_viewpoint(gts[s].dense, rng, config.scan);
      });
    }
    if (error) std::rethrow_exception(error);
    std::vector<std::size_t> first_pass;
    for (const auto& v : views) first_pass.push_back(v.first_pass_foreground);
    const double scan_eta =
        estimate_eta(first_pass, config.scan.splat.radius, config.m_gt * config.dense_factor);

    std::vector<Scan> scans(total);
#pragma omp parallel for schedule(dynamic)
    for (long s = 0; s < static_cast<long>(total); ++s) {
      capture(error, [&] { scans[s] = synthesize_scan(gts[s].dense, views[s].camera, config.scan, scan_eta, rngs[s]); });
    }
    if (error) std::rethrow_exception(error);

    std::size_t index = 0;
    for (int split = 0; split < 3; ++split) {
      for (std::size_t k = 0; k < counts[split]; ++k, ++index) {
        const std::string id = sample_id(index);
        const fs::path dir = cat_dir / kSplits[split] / id;
        fs::create_directories(dir);
        write_ply(dir / "partial.ply", scans[index].partial);
        write_pfm(dir / "depth.pfm", scans[index].depth);
        write_pgm(dir / "mask.pgm", scans[index].mask);
        write_camera(dir / "camera.json", scans[index].camera);
        write_ply(cat_dir / "gt" / (id + ".ply"), gts[index].cloud);
        if (scans[index].with_replacement) summary.with_replacement.push_back(name + "/" + id);
        ++summary.samples;
      }
    }

    ImageBank bank = build_bank(config.root, name);
    bank.r0 = config.scan.splat.radius;
    bank.m_points = config.m_out;
    bank.eta = estimate_eta(bank.maps, bank.r0, bank.m_points);
    write_bank_manifest(cat_dir / "bank.json", bank);
    summary.eta[name] = bank.eta;
    summary.scan_eta[name] = scan_eta;
  }

  nlohmann::json j;
  j["seed"] = config.seed;
  for (auto c : config.categories) j["categories"].push_back(to_string(c));
  j["counts"] = {{"train", config.n_train}, {"val", config.n_val}, {"test", config.n_test}};
  j["m_gt"] = config.m_gt;
  j["n_in"] = config.scan.n_in;
  j["width"] = config.scan.width;
  j["height"] = config.scan.height;
  j["r0"] = config.scan.splat.radius;
  j["camera_distance"] = config.scan.views.distance;
  j["eta"] = summary.eta;
  j["scan_eta"] = summary.scan_eta;
  j["with_replacement"] = summary.with_replacement;
  std::ofstream os(config.root / "dataset.json", std::ios::trunc);
  if (!os) throw IoError("cannot write " + (config.root / "dataset.json").string());
  os << j.dump(2) << '\n';
  return summary;
}

}  // namespace scanfill
