#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "scanfill/nn.hpp"
#include "scanfill/renderer.hpp"

namespace scanfill {

struct DiscriminatorConfig {
  std::vector<std::size_t> channels{16, 32, 64, 128, 256};
  std::size_t kernel = 4;
  double slope = 0.2;
};

/// Five stride-2 convolutions with leaky-relu, spatial mean-pool, then a
/// zero-initialised linear head giving one score per map.
template <typename T>
class Discriminator {
 public:
  using value_type = T;

  Discriminator(const DiscriminatorConfig& config, std::size_t height, std::size_t width, std::uint64_t seed);

  /// maps: B x H x W, values in [0, 1]. Returns B scores.
  ad::Tensor<T> operator()(const ad::Tensor<T>& maps) const;

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }

  template <typename F>
  void visit(F&& f) {
    for (std::size_t i = 0; i < conv_weight.size(); ++i) {
      f("conv" + std::to_string(i + 1) + ".weight", conv_weight[i]);
      f("conv" + std::to_string(i + 1) + ".bias", conv_bias[i]);
    }
    head.visit("head", f);
  }

  std::vector<ad::Tensor<T>> conv_weight, conv_bias;
  nn::Linear<T> head;

 private:
  DiscriminatorConfig config_;
  std::size_t height_, width_;
};

/// Category image bank: the raw depth maps the training partials came from,
/// ordered by sample id.
struct ImageBank {
  std::string category;
  std::vector<std::string> sample_ids;
  std::vector<std::string> map_paths;  // relative to the category directory
  std::vector<Image> maps;
  double eta = 0;       // DARE constant for rendering m_points-point clouds
  double r0 = 0;
  std::size_t m_points = 0;

  std::size_t size() const { return maps.size(); }
};

/// Scans <root>/<category>/train/<id>/depth.pfm in lexicographic id order.
ImageBank build_bank(const std::filesystem::path& root, const std::string& category);
void write_bank_manifest(const std::filesystem::path& path, const ImageBank& bank);
/// Reads bank.json and loads every listed map; errors name the missing file.
ImageBank read_bank(const std::filesystem::path& category_dir);

/// Depth divided by (camera distance + 1), which keeps values in [0, 1].
template <typename T>
ad::Tensor<T> normalize_depth(const ad::Tensor<T>& depth, double camera_distance);

/// Draws bank maps without replacement, reshuffling once the bank is used up.
class RealSampler {
 public:
  RealSampler(std::size_t bank_size, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t batch);

 private:
  std::size_t size_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// B distinct bank maps, normalised, stacked to B x H x W.
template <typename T>
ad::Tensor<T> stack_real(const ImageBank& bank, const std::vector<std::size_t>& indices, double camera_distance);
template <typename T>
ad::Tensor<T> sample_real(const ImageBank& bank, std::mt19937_64& rng, std::size_t batch, double camera_distance);

}  // namespace scanfill
