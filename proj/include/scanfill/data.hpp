#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "scanfill/renderer.hpp"

namespace scanfill {

enum class Category { table, lamp, hull };

std::string to_string(Category c);
/// Throws ConfigError naming `field` for unknown names.
Category parse_category(const std::string& name, const std::string& field = "data.categories");

struct ParamRange {
  const char* name;
  double lo, hi;
};

/// Declared parameter ranges (model units before normalisation).
std::span<const ParamRange> parameter_ranges(Category c);

struct ShapeSpec {
  Category category = Category::table;
  std::map<std::string, double> params;

  /// Throws InvalidInput for missing, unknown or out-of-range parameters.
  void validate() const;
};

ShapeSpec random_spec(Category c, std::mt19937_64& rng);

/// Area-weighted surface samples in model units with a part label per point
/// (table: 0 slab, 1-4 legs; lamp: 0 pole, 1 shade; hull: 0 body, 1 deck).
struct SurfaceSample {
  PointCloud cloud;
  std::vector<int> part;
};
SurfaceSample sample_surface(const ShapeSpec& spec, std::size_t n, std::mt19937_64& rng);

struct GroundTruth {
  PointCloud cloud;       // m_gt points, unit-sphere normalised
  std::vector<int> part;  // labels of `cloud`
  PointCloud dense;       // dense_factor * m_gt points in the same frame, for scan rendering
};
GroundTruth generate_gt(const ShapeSpec& spec, std::size_t m_gt, std::size_t dense_factor, std::uint64_t seed);

struct ScanConfig {
  std::size_t width = 64, height = 64;
  SplatConfig splat;  // radius is r0
  ViewSampling views;
  std::size_t n_in = 256;
  std::size_t max_attempts = 10;
};

struct Viewpoint {
  Camera camera;
  std::size_t first_pass_foreground = 0;  // A of the dense cloud under r0
};

/// Samples viewpoints until the dense cloud has a non-empty first-pass render.
Viewpoint choose_viewpoint(const PointCloud& dense, std::mt19937_64& rng, const ScanConfig& config);

struct Scan {
  Camera camera;
  Image depth;         // D_0
  Image mask;          // S_0 = binarize(D_0)
  PointCloud partial;  // P_in, n_in points
  std::size_t backprojected = 0;
  bool with_replacement = false;  // fewer foreground pixels than n_in
};

/// D_0 from the dense cloud at the DARE radius, back-projected and subsampled to n_in.
Scan synthesize_scan(const PointCloud& dense, const Camera& camera, const ScanConfig& config, double eta,
                     std::mt19937_64& rng);

/// Subsample of `points` with `n` entries: without replacement when possible.
std::vector<std::size_t> subsample_indices(std::size_t available, std::size_t n, std::mt19937_64& rng,
                                           bool& with_replacement);

struct DatasetConfig {
  std::filesystem::path root = "data";
  std::vector<Category> categories{Category::table, Category::lamp, Category::hull};
  std::size_t n_train = 64, n_val = 8, n_test = 8;
  std::size_t m_gt = 2048;
  std::size_t dense_factor = 4;
  std::size_t m_out = 1024;  // point count the bank eta is calibrated for
  ScanConfig scan;
  std::uint64_t seed = 1;
};

struct DatasetSummary {
  std::size_t samples = 0;
  std::map<std::string, double> eta;       // per category, for m_out-point clouds
  std::map<std::string, double> scan_eta;  // per category, for the dense scan clouds
  std::vector<std::string> with_replacement;
};

/// Writes <root>/<cat>/{train,val,test}/<id>/{partial.ply,depth.pfm,mask.pgm,camera.json},
/// <root>/<cat>/gt/<id>.ply, <root>/<cat>/bank.json and <root>/dataset.json.
DatasetSummary build_dataset(const DatasetConfig& config);

/// Deterministic per-sample seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

std::string sample_id(std::size_t index);
extern const char* const kSplits[3];

}  // namespace scanfill
