#include "scanfill/renderer.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <string>

#include "scanfill/knn.hpp"

namespace scanfill {

using namespace ad;

void Camera::validate() const {
  if (!(focal > 0) || !std::isfinite(focal)) throw InvalidInput("camera focal must be positive, got " + std::to_string(focal));
  if (width == 0 || height == 0) throw InvalidInput("camera image must be non-empty");
  const double err = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(err <= 1e-6)) throw InvalidInput("camera rotation is not orthonormal (error " + std::to_string(err) + ")");
  if (!translation.allFinite()) throw InvalidInput("camera translation is not finite");
}

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, std::size_t width,
               std::size_t height) {
  const Vec3 view = target - eye;
  if (!(view.norm() > 1e-12)) throw InvalidInput("look_at: eye and target coincide");
  const Vec3 f = view.normalized();
  Vec3 x = f.cross(up);
  if (!(x.norm() > 1e-9 * std::max(1.0, up.norm()))) throw InvalidInput("look_at: up is parallel to the view direction");
  x.normalize();
  const Vec3 y = f.cross(x);
  Camera c;
  c.focal = focal;
  c.width = width;
  c.height = height;
  c.cx = static_cast<double>(width) / 2.0;
  c.cy = static_cast<double>(height) / 2.0;
  c.rotation.row(0) = x;
  c.rotation.row(1) = y;
  c.rotation.row(2) = f;
  c.translation = -(c.rotation * eye);
  c.validate();
  return c;
}

Vec3 viewpoint_eye(double elevation_deg, double azimuth_deg, double distance) {
  const double e = elevation_deg * std::numbers::pi / 180.0, a = azimuth_deg * std::numbers::pi / 180.0;
  return distance * Vec3(std::cos(e) * std::sin(a), std::sin(e), std::cos(e) * std::cos(a));
}

Camera sample_viewpoint(std::mt19937_64& rng, const ViewSampling& s, std::size_t width, std::size_t height) {
  if (!(s.elevation_min <= s.elevation_max) || !(s.azimuth_min <= s.azimuth_max) || !(s.distance > 0) ||
      s.elevation_min < -90 || s.elevation_max > 90) {
    throw InvalidInput("sample_viewpoint: invalid ranges");
  }
  std::uniform_real_distribution<double> elevation(s.elevation_min, s.elevation_max);
  std::uniform_real_distribution<double> azimuth(s.azimuth_min, s.azimuth_max);
  const double e = s.elevation_min == s.elevation_max ? s.elevation_min : elevation(rng);
  const double a = s.azimuth_min == s.azimuth_max ? s.azimuth_min : azimuth(rng);
  return look_at(viewpoint_eye(e, a, s.distance), Vec3::Zero(), Vec3::UnitY(), static_cast<double>(height), width,
                 height);
}

double SplatConfig::radius_px(std::size_t width, std::size_t height) const {
  return radius * static_cast<double>(std::min(width, height)) / 2.0;
}

void SplatConfig::validate() const {
  if (!(radius > 0) || !std::isfinite(radius)) throw InvalidInput("splat radius must be positive, got " + std::to_string(radius));
  if (k_blend == 0) throw InvalidInput("splat k_blend must be at least 1");
  if (!(gamma > 0)) throw InvalidInput("splat gamma must be positive");
}

std::size_t Image::foreground() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](float v) { return v > 0; }));
}

template <typename T>
Image to_image(const Tensor<T>& map) {
  if (map.rank() != 2) throw ShapeError("to_image: expected H x W, got " + to_string(map.shape()));
  Image img(map.dim(1), map.dim(0));
  const auto v = map.data();
  for (std::size_t i = 0; i < v.size(); ++i) img.data[i] = static_cast<float>(v[i]);
  return img;
}

template <typename T>
Tensor<T> to_tensor(const Image& image) {
  return Tensor<T>({image.height, image.width}, std::vector<T>(image.data.begin(), image.data.end()));
}

template <typename T>
Tensor<T> project(const Tensor<T>& points, const Camera& camera) {
  if (points.rank() != 2 || points.dim(1) != 3) {
    throw ShapeError("project: expected N x 3 points, got " + to_string(points.shape()));
  }
  const std::size_t n = points.dim(0);
  const auto p = points.data();
  auto cam = std::make_shared<std::vector<double>>(n * 3);
  std::vector<T> out(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 c = camera.to_camera(Vec3(p[i * 3], p[i * 3 + 1], p[i * 3 + 2]));
    if (!(c.z() > 0)) {
      throw InvalidInput("project: point " + std::to_string(i) + " is not in front of the camera (z = " +
                         std::to_string(c.z()) + ")");
    }
    for (int d = 0; d < 3; ++d) (*cam)[i * 3 + d] = c[d];
    out[i * 3] = static_cast<T>(camera.focal * c.x() / c.z() + camera.cx);
    out[i * 3 + 1] = static_cast<T>(camera.focal * c.y() / c.z() + camera.cy);
    out[i * 3 + 2] = static_cast<T>(c.z());
  }
  const Mat3 rt = camera.rotation.transpose();
  const double f = camera.focal;
  return custom_op<T>({n, 3}, std::move(out), {points},
                      [cam, rt, f](std::span<const T> g, std::vector<std::span<T>>& gi) {
                        const std::size_t n = cam->size() / 3;
                        for (std::size_t i = 0; i < n; ++i) {
                          const double x = (*cam)[i * 3], y = (*cam)[i * 3 + 1], z = (*cam)[i * 3 + 2];
                          const double gx = g[i * 3], gy = g[i * 3 + 1], gz = g[i * 3 + 2];
                          const Vec3 gc(gx * f / z, gy * f / z, gz - (gx * f * x + gy * f * y) / (z * z));
                          const Vec3 gw = rt * gc;
                          for (int d = 0; d < 3; ++d) gi[0][i * 3 + d] += static_cast<T>(gw[d]);
                        }
                      });
}

std::size_t Raster::covered() const {
  std::size_t a = 0;
  for (std::size_t p = 0; p + 1 < offsets.size(); ++p) a += offsets[p + 1] > offsets[p] ? 1 : 0;
  return a;
}

Raster rasterize(std::span<const double> projected, std::size_t width, std::size_t height, const SplatConfig& splat) {
  splat.validate();
  if (projected.size() % 3 != 0) throw ShapeError("rasterize: projected buffer is not N x 3");
  const std::size_t n = projected.size() / 3, pixels = width * height;
  const double r = splat.radius_px(width, height), r2 = r * r;

  auto pixel_range = [&](double c, std::size_t extent, long& lo, long& hi) {
    lo = std::max(0L, static_cast<long>(std::ceil(c - r - 0.5)));
    hi = std::min(static_cast<long>(extent) - 1, static_cast<long>(std::floor(c + r - 0.5)));
  };
  // Two passes: count candidates per pixel, then scatter in point order.
  std::vector<std::size_t> count(pixels + 1, 0);
  auto visit = [&](auto&& emit) {
    for (std::size_t i = 0; i < n; ++i) {
      const double x = projected[i * 3], y = projected[i * 3 + 1];
      long u0, u1, v0, v1;
      pixel_range(x, width, u0, u1);
      pixel_range(y, height, v0, v1);
      for (long v = v0; v <= v1; ++v) {
        const double dy = static_cast<double>(v) + 0.5 - y;
        for (long u = u0; u <= u1; ++u) {
          const double dx = static_cast<double>(u) + 0.5 - x;
          const double d2 = dx * dx + dy * dy;
          if (d2 < r2) emit(static_cast<std::size_t>(v) * width + static_cast<std::size_t>(u), i, d2 / r2);
        }
      }
    }
  };
  visit([&](std::size_t p, std::size_t, double) { ++count[p + 1]; });
  std::partial_sum(count.begin(), count.end(), count.begin());
  std::vector<Fragment> candidates(count.back());
  std::vector<std::size_t> fill(count.begin(), count.end() - 1);
  visit([&](std::size_t p, std::size_t i, double q) {
    candidates[fill[p]++] = Fragment{static_cast<std::uint32_t>(i), projected[i * 3 + 2], q};
  });

  Raster raster;
  raster.width = width;
  raster.height = height;
  raster.radius_px = r;
  raster.offsets.assign(pixels + 1, 0);
  const std::size_t k = splat.k_blend;
  auto nearer = [](const Fragment& a, const Fragment& b) { return a.z < b.z || (a.z == b.z && a.point < b.point); };
#pragma omp parallel for schedule(static)
  for (long p = 0; p < static_cast<long>(pixels); ++p) {
    auto first = candidates.begin() + static_cast<long>(count[p]);
    auto last = candidates.begin() + static_cast<long>(count[p + 1]);
    const long keep = std::min<long>(static_cast<long>(k), last - first);
    std::partial_sort(first, first + keep, last, nearer);
    raster.offsets[p + 1] = static_cast<std::size_t>(keep);
  }
  std::partial_sum(raster.offsets.begin(), raster.offsets.end(), raster.offsets.begin());
  raster.fragments.resize(raster.offsets.back());
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(candidates.begin() + static_cast<long>(count[p]), raster.offsets[p + 1] - raster.offsets[p],
                raster.fragments.begin() + static_cast<long>(raster.offsets[p]));
  }
  return raster;
}

Raster rasterize(const PointCloud& cloud, const Camera& camera, const SplatConfig& splat) {
  NoGradGuard no_grad;
  const auto proj = project(to_tensor<double>(cloud), camera);
  return rasterize(proj.data(), camera.width, camera.height, splat);
}

namespace {

template <typename T>
std::vector<double> as_double(std::span<const T> v) {
  return std::vector<double>(v.begin(), v.end());
}

template <typename T>
RenderOutput<T> render_projected(const Tensor<T>& proj, const Camera& camera, const SplatConfig& splat) {
  const auto pd = as_double(proj.data());
  auto raster = std::make_shared<Raster>(rasterize(pd, camera.width, camera.height, splat));
  auto xy = std::make_shared<std::vector<double>>(pd);
  const std::size_t w = camera.width, h = camera.height, pixels = w * h;
  const double gamma = splat.gamma;

  std::vector<T> sil(pixels, T(0)), depth(pixels, T(0));
  for (std::size_t p = 0; p < pixels; ++p) {
    const auto frags = raster->at(p % w, p / w);
    if (frags.empty()) continue;
    double keep = 1;
    for (const auto& f : frags) keep *= 1.0 - std::pow(1.0 - f.q, gamma);
    sil[p] = static_cast<T>(1.0 - keep);
    depth[p] = static_cast<T>(frags.front().z);
  }

  RenderOutput<T> out;
  out.radius = splat.radius;
  out.silhouette = custom_op<T>(
      {h, w}, std::move(sil), {proj}, [raster, xy, gamma, w](std::span<const T> g, std::vector<std::span<T>>& gi) {
        const double r2 = raster->radius_px * raster->radius_px;
        double alpha[64];
        for (std::size_t p = 0; p < g.size(); ++p) {
          if (g[p] == T(0)) continue;
          const std::size_t u = p % w, v = p / w;
          const auto frags = raster->at(u, v);
          const std::size_t k = std::min<std::size_t>(frags.size(), 64);
          for (std::size_t a = 0; a < k; ++a) alpha[a] = std::pow(1.0 - frags[a].q, gamma);
          for (std::size_t a = 0; a < k; ++a) {
            double others = 1;
            for (std::size_t b = 0; b < k; ++b)
              if (b != a) others *= 1.0 - alpha[b];
            // dS/dq = -others * gamma * (1 - q)^(gamma - 1); dq/dx = 2 (x - px) / r^2
            const double dq = -others * gamma * std::pow(1.0 - frags[a].q, gamma - 1.0);
            const std::size_t i = frags[a].point;
            const double dx = (*xy)[i * 3] - (static_cast<double>(u) + 0.5);
            const double dy = (*xy)[i * 3 + 1] - (static_cast<double>(v) + 0.5);
            const double s = static_cast<double>(g[p]) * dq * 2.0 / r2;
            gi[0][i * 3] += static_cast<T>(s * dx);
            gi[0][i * 3 + 1] += static_cast<T>(s * dy);
          }
        }
      });
  out.depth = custom_op<T>({h, w}, std::move(depth), {proj},
                           [raster, w](std::span<const T> g, std::vector<std::span<T>>& gi) {
                             for (std::size_t p = 0; p < g.size(); ++p) {
                               const auto frags = raster->at(p % w, p / w);
                               if (!frags.empty()) gi[0][frags.front().point * 3 + 2] += g[p];
                             }
                           });
  return out;
}

}  // namespace

template <typename T>
RenderOutput<T> render(const Tensor<T>& points, const Camera& camera, const SplatConfig& splat) {
  splat.validate();
  if (splat.k_blend > 64) throw InvalidInput("splat k_blend above 64 is not supported");
  return render_projected(project(points, camera), camera, splat);
}

template <typename T>
Tensor<T> render_silhouette(const Tensor<T>& points, const Camera& camera, const SplatConfig& splat) {
  return render(points, camera, splat).silhouette;
}

template <typename T>
Tensor<T> render_depth(const Tensor<T>& points, const Camera& camera, const SplatConfig& splat) {
  return render(points, camera, splat).depth;
}

double dare_radius(std::size_t m_points, std::size_t foreground, double eta, double fallback) {
  if (foreground == 0) return fallback;
  if (m_points == 0) throw InvalidInput("dare_radius: no points");
  const double r = eta * static_cast<double>(foreground) / static_cast<double>(m_points);
  if (!(r > 0) || !std::isfinite(r)) throw InvalidInput("dare_radius: radius must be positive, got " + std::to_string(r));
  return r;
}

double estimate_eta(std::span<const std::size_t> foreground_counts, double r0, std::size_t m_points) {
  if (foreground_counts.empty()) throw InvalidInput("estimate_eta: no depth maps");
  double total = 0;
  for (auto a : foreground_counts) total += static_cast<double>(a);
  const double a_avg = total / static_cast<double>(foreground_counts.size());
  if (!(a_avg > 0)) throw InvalidInput("estimate_eta: every depth map is empty");
  return r0 * static_cast<double>(m_points) / a_avg;
}

double estimate_eta(std::span<const Image> depth_maps, double r0, std::size_t m_points) {
  std::vector<std::size_t> counts;
  counts.reserve(depth_maps.size());
  for (const auto& m : depth_maps) counts.push_back(m.foreground());
  return estimate_eta(counts, r0, m_points);
}

template <typename T>
RenderOutput<T> render_dare(const Tensor<T>& points, const Camera& camera, const SplatConfig& splat, double eta) {
  splat.validate();
  const auto proj = project(points, camera);
  const std::size_t a = rasterize(as_double(proj.data()), camera.width, camera.height, splat).covered();
  SplatConfig second = splat;
  second.radius = dare_radius(points.dim(0), a, eta, splat.radius);
  auto out = render_projected(proj, camera, second);
  out.first_pass_foreground = a;
  return out;
}

template <typename T>
Tensor<T> render_depth_dare(const Tensor<T>& points, const Camera& camera, const SplatConfig& splat, double eta) {
  return render_dare(points, camera, splat, eta).depth;
}

PointCloud backproject(const Image& depth, const Camera& camera) {
  PointCloud cloud;
  for (std::size_t v = 0; v < depth.height; ++v) {
    for (std::size_t u = 0; u < depth.width; ++u) {
      const double z = depth.at(u, v);
      if (!(z > 0)) continue;
      const Vec3 c((static_cast<double>(u) + 0.5 - camera.cx) * z / camera.focal,
                   (static_cast<double>(v) + 0.5 - camera.cy) * z / camera.focal, z);
      cloud.positions.push_back(camera.to_world(c));
    }
  }
  return cloud;
}

Image binarize(const Image& depth) {
  Image out(depth.width, depth.height);
  for (std::size_t i = 0; i < depth.data.size(); ++i) out.data[i] = depth.data[i] > 0 ? 1.0f : 0.0f;
  return out;
}

double hole_fraction(const Image& test, const Image& reference) {
  if (test.width != reference.width || test.height != reference.height) {
    throw ShapeError("hole_fraction: map sizes differ");
  }
  std::size_t fg = 0, holes = 0;
  for (std::size_t i = 0; i < reference.data.size(); ++i) {
    if (!(reference.data[i] > 0)) continue;
    ++fg;
    if (!(test.data[i] > 0)) ++holes;
  }
  if (fg == 0) throw InvalidInput("hole_fraction: reference silhouette is empty");
  return static_cast<double>(holes) / static_cast<double>(fg);
}

PointCloud resample_cloud(const PointCloud& cloud, std::size_t factor, std::mt19937_64& rng) {
  if (factor == 0) throw InvalidInput("resample_cloud: factor must be at least 1");
  if (factor == 1) return PointCloud(cloud.positions);
  if (cloud.size() < 3) throw InvalidInput("resample_cloud: needs at least 3 points");
  const std::size_t k = std::min<std::size_t>(6, cloud.size() - 1);
  const auto nb = KnnIndex(cloud).member_neighbors(k);
  std::uniform_int_distribution<std::size_t> pick(0, k - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointCloud out;
  out.positions.reserve(cloud.size() * factor);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& a = cloud.positions[i];
    out.positions.push_back(a);
    for (std::size_t s = 1; s < factor; ++s) {
      const std::size_t j = pick(rng);
      std::size_t l = pick(rng);
      if (l == j) l = (l + 1) % k;
      const Vec3& b = cloud.positions[nb[i * k + j]];
      const Vec3& c = cloud.positions[nb[i * k + l]];
      const double r1 = std::sqrt(unit(rng)), r2 = unit(rng);
      out.positions.push_back((1 - r1) * a + r1 * (1 - r2) * b + r1 * r2 * c);
    }
  }
  return out;
}

DareComparison compare_dare(const PointCloud& cloud, const Camera& camera, const SplatConfig& splat,
                            std::optional<double> eta, std::mt19937_64& rng) {
  ad::NoGradGuard no_grad;
  const PointCloud dense = resample_cloud(cloud, 16, rng);
  const auto reference = binarize(to_image(render_depth(to_tensor<double>(dense), camera, splat)));
  DareComparison c;
  if (eta) {
    c.eta = *eta;
  } else {
    const std::size_t counts[] = {reference.foreground()};
    c.eta = estimate_eta(counts, splat.radius, dense.size());
  }
  const auto points = to_tensor<double>(cloud);
  const auto dare = render_dare(points, camera, splat, c.eta);
  c.first_pass_foreground = dare.first_pass_foreground;
  c.dare_radius = dare.radius;
  c.fixed_holes = hole_fraction(to_image(render_depth(points, camera, splat)), reference);
  c.dare_holes = hole_fraction(to_image(dare.depth), reference);
  return c;
}

#define SCANFILL_INSTANTIATE_RENDERER(T)                                                                \
  template Image to_image(const Tensor<T>&);                                                           \
  template Tensor<T> to_tensor<T>(const Image&);                                                       \
  template Tensor<T> project(const Tensor<T>&, const Camera&);                                         \
  template RenderOutput<T> render(const Tensor<T>&, const Camera&, const SplatConfig&);                \
  template Tensor<T> render_silhouette(const Tensor<T>&, const Camera&, const SplatConfig&);           \
  template Tensor<T> render_depth(const Tensor<T>&, const Camera&, const SplatConfig&);                \
  template RenderOutput<T> render_dare(const Tensor<T>&, const Camera&, const SplatConfig&, double);   \
  template Tensor<T> render_depth_dare(const Tensor<T>&, const Camera&, const SplatConfig&, double);

SCANFILL_INSTANTIATE_RENDERER(float)
SCANFILL_INSTANTIATE_RENDERER(double)

}  // namespace scanfill
