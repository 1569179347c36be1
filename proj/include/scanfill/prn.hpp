#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "scanfill/encodings.hpp"
#include "scanfill/nn.hpp"

namespace scanfill {

struct PrnConfig {
  std::size_t n_in = 256;
  std::size_t n_coarse = 256;
  std::size_t m_out = 1024;
  std::size_t l_retrieve = 16;
  std::size_t global_dim = 128;
  std::size_t embed_dim = 1;
  double offset_scale = 0.2;

  std::size_t decoder_hidden = 256;
  std::size_t attention_hidden = 16;
  std::size_t refine_hidden = 128;
  EncodingParams encodings;

  // Ablations. coarse_only drops retrieval and the refiner; the decoder then
  // emits m_out points directly so both variants produce equal-size outputs.
  bool coarse_only = false;
  bool use_position = true;
  bool use_curvature = true;

  std::size_t upsample_ratio() const { return m_out / n_coarse; }
  std::size_t decoded_points() const { return coarse_only ? m_out : n_coarse; }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Scalar MLP 1 -> hidden -> embed_dim used for attention queries and keys.
template <typename T>
struct ProjectionMlp {
  using value_type = T;
  nn::Linear<T> fc1, fc2;

  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const { return fc2(ad::relu(fc1(x))); }
  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    fc1.visit(prefix + ".fc1", f);
    fc2.visit(prefix + ".fc2", f);
  }
};

template <typename T>
struct Retrieved {
  ad::Tensor<T> values;              // n_coarse x L, descending weight order
  std::vector<std::size_t> indices;  // n_coarse x L into the partial cloud
};

template <typename T>
struct PrnOutput {
  ad::Tensor<T> global;  // 1 x global_dim
  ad::Tensor<T> coarse;  // decoded_points x 3
  ad::Tensor<T> out;     // m_out x 3
  Retrieved<T> position;
  Retrieved<T> curvature;
  PatternEncodings coarse_encodings;
};

struct ForwardOptions {
  // Encodings of a fixed input may be computed once and reused.
  const PatternEncodings* input_encodings = nullptr;
  // Freezes the coarse encodings; used when differentiating numerically,
  // since they are constants of the analytic graph.
  const PatternEncodings* coarse_encodings = nullptr;
  // Normals of the input face this point when set (the scan camera).
  std::optional<Vec3> viewpoint;
};

/// Softmax over input points of query-key products, one row per coarse point.
/// Queries come from f_c (rows x 1) and keys from f_in (n_in x 1).
template <typename T>
ad::Tensor<T> attention_weights(const ProjectionMlp<T>& query, const ProjectionMlp<T>& key,
                                const ad::Tensor<T>& f_c, const ad::Tensor<T>& f_in);

/// The L largest weights of each row of W, returned as the matching entries
/// of f_in (n_in x 1). Ties go to the smaller index.
template <typename T>
Retrieved<T> retrieve_top_l(const ad::Tensor<T>& weights, const ad::Tensor<T>& f_in, std::size_t l);

template <typename T>
ad::Tensor<T> encoding_column(const EncodingVector& e);

template <typename T>
class Prn {
 public:
  using value_type = T;

  Prn(const PrnConfig& config, std::uint64_t seed);

  const PrnConfig& config() const { return config_; }

  ad::Tensor<T> encode_global(const ad::Tensor<T>& p_in) const;
  ad::Tensor<T> decode_coarse(const ad::Tensor<T>& global) const;
  /// Replicates the coarse points and adds tanh-bounded offsets.
  ad::Tensor<T> refine(const ad::Tensor<T>& p_c, const ad::Tensor<T>& e_pos, const ad::Tensor<T>& e_cur,
                       const ad::Tensor<T>& f_pos_c, const ad::Tensor<T>& f_cur_c,
                       const ad::Tensor<T>& global) const;

  PrnOutput<T> forward(const ad::Tensor<T>& p_in, const ForwardOptions& options = {}) const;

  /// Fixed 2-D grid coordinate of each replica, r x 2.
  const ad::Tensor<T>& replica_codes() const { return codes_; }

  template <typename F>
  void visit(F&& f) {
    enc1.visit("encoder.fc1", f);
    enc2.visit("encoder.fc2", f);
    enc3.visit("encoder.fc3", f);
    enc4.visit("encoder.fc4", f);
    dec1.visit("decoder.fc1", f);
    dec2.visit("decoder.fc2", f);
    dec3.visit("decoder.fc3", f);
    if (config_.coarse_only) return;
    query_pos.visit("attention.query_pos", f);
    key_pos.visit("attention.key_pos", f);
    query_cur.visit("attention.query_cur", f);
    key_cur.visit("attention.key_cur", f);
    ref1_point.visit("refiner.fc1_point", f);
    ref1_global.visit("refiner.fc1_global", f);
    ref1_code.visit("refiner.fc1_code", f);
    ref2.visit("refiner.fc2", f);
    ref3.visit("refiner.fc3", f);
  }

  nn::Linear<T> enc1, enc2, enc3, enc4;
  nn::Linear<T> dec1, dec2, dec3;
  ProjectionMlp<T> query_pos, key_pos, query_cur, key_cur;
  // The refiner's first layer acts on [xyz, e_pos, e_cur, f_pos, f_cur | o | code];
  // it is stored as three blocks so per-coarse and global parts are computed once.
  nn::Linear<T> ref1_point, ref1_global, ref1_code, ref2, ref3;

 private:
  PrnConfig config_;
  ad::Tensor<T> codes_;
};

}  // namespace scanfill
