#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "scanfill/data.hpp"
#include "scanfill/losses.hpp"
#include "scanfill/man.hpp"
#include "scanfill/optim.hpp"
#include "scanfill/prn.hpp"

namespace scanfill {

struct TrainConfig {
  std::filesystem::path root = "data";
  std::string category = "table";
  std::filesystem::path out_dir = "runs/table";
  PrnConfig prn;
  SplatConfig splat;
  ViewSampling views;
  DiscriminatorConfig disc;
  bool dare = true;  // false renders every cloud at the fixed r0
  LossWeights weights;
  std::size_t k_density = 8;
  double mask_threshold = 0.5;
  bool squared_ucd = false;
  double lr = 1e-4;
  double lr_decay = 0.5;
  std::size_t decay_every = 200;
  std::size_t epochs = 600;
  std::size_t batch_size = 8;
  std::size_t checkpoint_every = 50;
  std::size_t max_samples = 0;  // 0 uses the whole training split
  std::uint64_t seed = 1;

  void validate() const;
};

/// One training partial with everything the generator loss needs. Ground
/// truth is not part of it.
struct TrainSample {
  std::string id;
  Camera camera;
  ad::Tensorf p_in;  // n_in x 3
  ad::Tensorf s0;    // H x W mask
  PatternEncodings encodings;
};

/// Reads <root>/<category>/<split>/*/{partial.ply,mask.pgm,camera.json} in id order.
std::vector<TrainSample> load_split(const std::filesystem::path& root, const std::string& category,
                                    const std::string& split, const EncodingParams& encodings,
                                    std::size_t max_samples = 0);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double l_part = 0, l_rend = 0, l_dens = 0, l_gen = 0, l_disc = 0;
  double ucd_out = 0;  // mean UCD(P_in, P_out)
  double seconds = 0;
};

class Trainer {
 public:
  explicit Trainer(const TrainConfig& config);

  /// Runs epochs until `config.epochs`, writing losses.csv and checkpoints.
  /// `on_epoch` sees every record as it is produced.
  std::vector<EpochRecord> train(const std::function<void(const EpochRecord&)>& on_epoch = {});
  EpochRecord run_epoch();

  /// Parameters, optimiser moments and the epoch counter.
  void save(const std::filesystem::path& path);
  void load(const std::filesystem::path& path);

  std::size_t epoch() const { return epoch_; }
  const TrainConfig& config() const { return config_; }
  const std::vector<TrainSample>& samples() const { return samples_; }
  Prn<float>& generator() { return g_; }
  Discriminator<float>& discriminator() { return d_; }
  const ImageBank& bank() const { return bank_; }

  /// Viewpoint used for the adversarial render of `sample` in `epoch`.
  Camera fake_view(std::size_t epoch, std::size_t sample) const;

 private:
  double render_eta() const;

  TrainConfig config_;
  std::vector<TrainSample> samples_;
  ImageBank bank_;
  Prn<float> g_;
  Discriminator<float> d_;
  ad::Adam<float> opt_g_, opt_d_;
  std::size_t epoch_ = 0;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::size_t epoch);
std::filesystem::path final_checkpoint_path(const std::filesystem::path& out_dir);

/// Loads only the generator weights of a checkpoint.
void load_generator(Prn<float>& g, const std::filesystem::path& checkpoint);

/// FNV-1a over every parameter's bytes.
template <typename Model>
std::uint64_t parameter_hash(Model& m) {
  std::uint64_t h = 1469598103934665603ull;
  m.visit([&](const std::string&, auto& t) {
    const auto v = t.data();
    const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
    for (std::size_t i = 0; i < v.size_bytes(); ++i) h = (h ^ bytes[i]) * 1099511628211ull;
  });
  return h;
}

}  // namespace scanfill
