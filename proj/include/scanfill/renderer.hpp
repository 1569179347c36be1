#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "scanfill/point_cloud.hpp"
#include "scanfill/tensor.hpp"

namespace scanfill {

/// Pinhole camera. Camera frame: x right, y down, z forward; pixel (u, v)
/// has its centre at (u + 0.5, v + 0.5).
struct Camera {
  double focal = 64;
  double cx = 32, cy = 32;
  Mat3 rotation = Mat3::Identity();  // world -> camera
  Vec3 translation = Vec3::Zero();
  std::size_t width = 64, height = 64;

  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 to_world(const Vec3& cam) const { return rotation.transpose() * (cam - translation); }
  Vec3 center() const { return -(rotation.transpose() * translation); }
  /// Throws InvalidInput unless focal > 0, the image is non-empty and R is orthonormal within 1e-6.
  void validate() const;
};

/// Focal length defaults to the image height, the principal point to the image centre.
Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, std::size_t width,
               std::size_t height);

struct ViewSampling {
  double distance = 2.0;
  double elevation_min = -30, elevation_max = 30;  // degrees
  double azimuth_min = 0, azimuth_max = 360;
};

/// Eye at (cos e sin a, sin e, cos e cos a) * distance looking at the origin, +y up.
Vec3 viewpoint_eye(double elevation_deg, double azimuth_deg, double distance);
Camera sample_viewpoint(std::mt19937_64& rng, const ViewSampling& sampling, std::size_t width, std::size_t height);

struct SplatConfig {
  double radius = 0.03;  // NDC units; pixels = radius * min(W, H) / 2
  std::size_t k_blend = 8;
  double gamma = 1.0;

  double radius_px(std::size_t width, std::size_t height) const;
  void validate() const;
};

/// Row-major single-channel image used for stored depth maps and masks.
struct Image {
  std::size_t width = 0, height = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), data(w * h, fill) {}
  float& at(std::size_t u, std::size_t v) { return data[v * width + u]; }
  float at(std::size_t u, std::size_t v) const { return data[v * width + u]; }
  std::size_t foreground() const;
};

template <typename T>
Image to_image(const ad::Tensor<T>& map);
template <typename T>
ad::Tensor<T> to_tensor(const Image& image);

/// Screen position and camera depth of each point, N x 3 (x px, y px, z).
/// Differentiable; throws InvalidInput if any point has z <= 0.
template <typename T>
ad::Tensor<T> project(const ad::Tensor<T>& points, const Camera& camera);

struct Fragment {
  std::uint32_t point;
  double z;
  double q;  // squared screen distance over squared radius, in [0, 1)
};

/// Per-pixel fragments sorted by (z, point id), at most k_blend each.
struct Raster {
  std::size_t width = 0, height = 0;
  double radius_px = 0;
  std::vector<std::size_t> offsets;  // width*height + 1
  std::vector<Fragment> fragments;

  std::span<const Fragment> at(std::size_t u, std::size_t v) const {
    const std::size_t p = v * width + u;
    return {fragments.data() + offsets[p], offsets[p + 1] - offsets[p]};
  }
  std::size_t covered() const;
};

/// A point covers a pixel iff the pixel centre lies strictly inside its splat.
Raster rasterize(std::span<const double> projected, std::size_t width, std::size_t height, const SplatConfig& splat);
Raster rasterize(const PointCloud& cloud, const Camera& camera, const SplatConfig& splat);

template <typename T>
struct RenderOutput {
  ad::Tensor<T> silhouette;  // H x W in [0, 1]
  ad::Tensor<T> depth;       // H x W, 0 where uncovered
  double radius = 0;         // NDC radius used
  std::size_t first_pass_foreground = 0;  // A under r0 (DARE only)
};

/// Soft silhouette 1 - prod(1 - alpha_k), alpha = (1 - d^2/r^2)^gamma, and
/// nearest-z depth, both differentiable w.r.t. the points.
template <typename T>
RenderOutput<T> render(const ad::Tensor<T>& points, const Camera& camera, const SplatConfig& splat);
template <typename T>
ad::Tensor<T> render_silhouette(const ad::Tensor<T>& points, const Camera& camera, const SplatConfig& splat);
template <typename T>
ad::Tensor<T> render_depth(const ad::Tensor<T>& points, const Camera& camera, const SplatConfig& splat);

/// r = eta * A / M; falls back to `fallback` when A = 0. Throws if r <= 0.
double dare_radius(std::size_t m_points, std::size_t foreground, double eta, double fallback);
/// eta = r0 * M / mean(A), so a view of average density keeps r0.
double estimate_eta(std::span<const std::size_t> foreground_counts, double r0, std::size_t m_points);
double estimate_eta(std::span<const Image> depth_maps, double r0, std::size_t m_points);

/// First pass at splat.radius counts A, second pass renders at the DARE radius.
template <typename T>
RenderOutput<T> render_dare(const ad::Tensor<T>& points, const Camera& camera, const SplatConfig& splat, double eta);
template <typename T>
ad::Tensor<T> render_depth_dare(const ad::Tensor<T>& points, const Camera& camera, const SplatConfig& splat,
                                double eta);

/// Foreground pixels lifted through the inverse pinhole model, row-major order.
PointCloud backproject(const Image& depth, const Camera& camera);
Image binarize(const Image& depth);

/// Fraction of reference foreground pixels the test map leaves uncovered.
double hole_fraction(const Image& test, const Image& reference);

/// Densifies a cloud by `factor`: each point gains factor-1 samples inside
/// triangles spanned with random pairs of its 6 nearest neighbours.
PointCloud resample_cloud(const PointCloud& cloud, std::size_t factor, std::mt19937_64& rng);

struct DareComparison {
  double eta = 0;
  std::size_t first_pass_foreground = 0;
  double dare_radius = 0;
  double fixed_holes = 0;  // hole fraction at r0
  double dare_holes = 0;   // hole fraction at the DARE radius
};

/// Hole fractions of fixed-r0 and DARE renders against the silhouette of the
/// 16x resampled cloud at r0. Without `eta`, the reference view fixes it:
/// eta = r0 * |reference| / A_reference.
DareComparison compare_dare(const PointCloud& cloud, const Camera& camera, const SplatConfig& splat,
                            std::optional<double> eta, std::mt19937_64& rng);

}  // namespace scanfill
