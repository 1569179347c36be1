#include "scanfill/man.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "scanfill/image_io.hpp"

namespace scanfill {

using namespace ad;

template <typename T>
Discriminator<T>::Discriminator(const DiscriminatorConfig& config, std::size_t height, std::size_t width,
                                std::uint64_t seed)
    : config_(config), height_(height), width_(width) {
  if (config_.channels.empty()) throw ConfigError("disc.channels must not be empty");
  std::size_t h = height, w = width;
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    if (h < 2 || w < 2) {
      throw ConfigError("discriminator: " + std::to_string(height) + "x" + std::to_string(width) +
                        " maps are too small for " + std::to_string(config_.channels.size()) + " stride-2 layers");
    }
    h /= 2;
    w /= 2;
  }
  std::mt19937_64 rng(seed);
  std::size_t in = 1;
  const std::size_t k = config_.kernel;
  for (std::size_t c : config_.channels) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
    conv_weight.push_back(nn::uniform_init<T>({c, in, k, k}, bound, rng));
    conv_bias.push_back(nn::uniform_init<T>({c}, bound, rng));
    in = c;
  }
  head = nn::Linear<T>(in, 1, rng, /*zero=*/true);
}

template <typename T>
Tensor<T> Discriminator<T>::operator()(const Tensor<T>& maps) const {
  if (maps.rank() != 3 || maps.dim(1) != height_ || maps.dim(2) != width_) {
    throw ShapeError("discriminator expects B x " + std::to_string(height_) + " x " + std::to_string(width_) +
                     " maps, got " + to_string(maps.shape()));
  }
  const std::size_t b = maps.dim(0);
  const std::size_t pad = (config_.kernel - 2) / 2;
  auto x = reshape(maps, Shape{b, 1, height_, width_});
  for (std::size_t i = 0; i < conv_weight.size(); ++i) {
    x = leaky_relu(conv2d(x, conv_weight[i], conv_bias[i], 2, pad), static_cast<T>(config_.slope));
  }
  const std::size_t c = x.dim(1), spatial = x.dim(2) * x.dim(3);
  const auto pooled = mean(reshape(x, Shape{b, c, spatial}), 2);
  return reshape(head(pooled), Shape{b});
}

namespace {

std::filesystem::path category_dir(const std::filesystem::path& root, const std::string& category) {
  return root / category;
}

}  // namespace

ImageBank build_bank(const std::filesystem::path& root, const std::string& category) {
  const auto train = category_dir(root, category) / "train";
  if (!std::filesystem::is_directory(train)) throw IoError("missing training split: " + train.string());
  ImageBank bank;
  bank.category = category;
  for (const auto& entry : std::filesystem::directory_iterator(train)) {
    if (entry.is_directory()) bank.sample_ids.push_back(entry.path().filename().string());
  }
  std::sort(bank.sample_ids.begin(), bank.sample_ids.end());
  for (const auto& id : bank.sample_ids) {
    const std::string rel = "train/" + id + "/depth.pfm";
    const auto path = category_dir(root, category) / rel;
    if (!std::filesystem::exists(path)) throw IoError("image bank: missing depth map " + path.string());
    bank.map_paths.push_back(rel);
    bank.maps.push_back(read_pfm(path));
  }
  return bank;
}

void write_bank_manifest(const std::filesystem::path& path, const ImageBank& bank) {
  nlohmann::json j;
  j["category"] = bank.category;
  j["eta"] = bank.eta;
  j["r0"] = bank.r0;
  j["m_points"] = bank.m_points;
  j["samples"] = nlohmann::json::array();
  for (std::size_t i = 0; i < bank.sample_ids.size(); ++i) {
    j["samples"].push_back({{"id", bank.sample_ids[i]}, {"depth", bank.map_paths[i]}});
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write bank manifest: " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("failed while writing bank manifest: " + path.string());
}

ImageBank read_bank(const std::filesystem::path& dir) {
  const auto path = dir / "bank.json";
  std::ifstream is(path);
  if (!is) throw IoError("cannot open bank manifest: " + path.string());
  ImageBank bank;
  try {
    nlohmann::json j;
    is >> j;
    bank.category = j.at("category").get<std::string>();
    bank.eta = j.at("eta").get<double>();
    bank.r0 = j.at("r0").get<double>();
    bank.m_points = j.at("m_points").get<std::size_t>();
    for (const auto& s : j.at("samples")) {
      bank.sample_ids.push_back(s.at("id").get<std::string>());
      bank.map_paths.push_back(s.at("depth").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed bank manifest: " + e.what());
  }
  for (const auto& rel : bank.map_paths) {
    const auto p = dir / rel;
    if (!std::filesystem::exists(p)) throw IoError("image bank: missing depth map " + p.string());
    bank.maps.push_back(read_pfm(p));
  }
  return bank;
}

template <typename T>
Tensor<T> normalize_depth(const Tensor<T>& depth, double camera_distance) {
  return mul_scalar(depth, static_cast<T>(1.0 / (camera_distance + 1.0)));
}

RealSampler::RealSampler(std::size_t bank_size, std::uint64_t seed) : size_(bank_size), rng_(seed) {
  if (size_ == 0) throw InvalidInput("image bank is empty");
}

std::vector<std::size_t> RealSampler::next(std::size_t batch) {
  if (batch > size_) {
    throw InvalidInput("real batch of " + std::to_string(batch) + " exceeds the bank size " + std::to_string(size_));
  }
  std::vector<std::size_t> out;
  out.reserve(batch);
  while (out.size() < batch) {
    if (cursor_ == order_.size()) {
      order_.resize(size_);
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

template <typename T>
Tensor<T> stack_real(const ImageBank& bank, const std::vector<std::size_t>& indices, double camera_distance) {
  if (bank.size() == 0) throw InvalidInput("image bank is empty");
  const std::size_t h = bank.maps[0].height, w = bank.maps[0].width;
  std::vector<T> v;
  v.reserve(indices.size() * h * w);
  const double scale = 1.0 / (camera_distance + 1.0);
  for (auto i : indices) {
    const Image& m = bank.maps.at(i);
    if (m.height != h || m.width != w) throw ShapeError("image bank maps differ in size");
    for (float x : m.data) v.push_back(static_cast<T>(std::clamp(static_cast<double>(x) * scale, 0.0, 1.0)));
  }
  return Tensor<T>({indices.size(), h, w}, std::move(v));
}

template <typename T>
Tensor<T> sample_real(const ImageBank& bank, std::mt19937_64& rng, std::size_t batch, double camera_distance) {
  if (bank.size() == 0) throw InvalidInput("image bank is empty");
  if (batch > bank.size()) {
    throw InvalidInput("real batch of " + std::to_string(batch) + " exceeds the bank size " +
                       std::to_string(bank.size()));
  }
  std::vector<std::size_t> order(bank.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(batch);
  return stack_real<T>(bank, order, camera_distance);
}

template class Discriminator<float>;
template class Discriminator<double>;
template Tensor<float> normalize_depth(const Tensor<float>&, double);
template Tensor<double> normalize_depth(const Tensor<double>&, double);
template Tensor<float> stack_real<float>(const ImageBank&, const std::vector<std::size_t>&, double);
template Tensor<double> stack_real<double>(const ImageBank&, const std::vector<std::size_t>&, double);
template Tensor<float> sample_real<float>(const ImageBank&, std::mt19937_64&, std::size_t, double);
template Tensor<double> sample_real<double>(const ImageBank&, std::mt19937_64&, std::size_t, double);

}  // namespace scanfill
