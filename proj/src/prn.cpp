#include "scanfill/prn.hpp"

#include <algorithm>
#include <cmath>

namespace scanfill {

using namespace ad;

void PrnConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be at least 1");
  };
  positive(n_in, "prn.n_in");
  positive(n_coarse, "prn.n_coarse");
  positive(m_out, "prn.m_out");
  positive(l_retrieve, "prn.l_retrieve");
  positive(global_dim, "prn.global_dim");
  positive(embed_dim, "prn.embed_dim");
  positive(decoder_hidden, "prn.decoder_hidden");
  positive(attention_hidden, "prn.attention_hidden");
  positive(refine_hidden, "prn.refine_hidden");
  if (m_out % n_coarse != 0) {
    throw ConfigError("prn.m_out (" + std::to_string(m_out) + ") must be a multiple of prn.n_coarse (" +
                      std::to_string(n_coarse) + ")");
  }
  if (l_retrieve > n_in) {
    throw ConfigError("prn.l_retrieve (" + std::to_string(l_retrieve) + ") exceeds prn.n_in (" +
                      std::to_string(n_in) + ")");
  }
  if (!(offset_scale > 0)) throw ConfigError("prn.offset_scale must be positive");
  const std::size_t k = std::max(encodings.k_position, encodings.k_curvature);
  if (!coarse_only && k + 1 > n_coarse) {
    throw ConfigError("prn.n_coarse (" + std::to_string(n_coarse) + ") must exceed the encoding K (" +
                      std::to_string(k) + ")");
  }
}

template <typename T>
Tensor<T> encoding_column(const EncodingVector& e) {
  const std::size_t n = e.values.size();
  return Tensor<T>({n, 1}, std::vector<T>(e.values.begin(), e.values.end()));
}

template <typename T>
Tensor<T> attention_weights(const ProjectionMlp<T>& query, const ProjectionMlp<T>& key, const Tensor<T>& f_c,
                            const Tensor<T>& f_in) {
  const auto g = query(f_c);
  const auto h = key(f_in);
  auto logits = matmul(g, transpose(h));
  const std::size_t d = g.dim(1);
  if (d > 1) logits = mul_scalar(logits, static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  return softmax(logits, -1);
}

template <typename T>
Retrieved<T> retrieve_top_l(const Tensor<T>& weights, const Tensor<T>& f_in, std::size_t l) {
  if (weights.rank() != 2 || f_in.rank() != 2 || f_in.dim(1) != 1 || weights.dim(1) != f_in.dim(0)) {
    throw ShapeError("retrieve_top_l: weights " + to_string(weights.shape()) + " do not match encodings " +
                     to_string(f_in.shape()));
  }
  if (l > weights.dim(1)) {
    throw ShapeError("retrieve_top_l: L = " + std::to_string(l) + " exceeds " + std::to_string(weights.dim(1)) +
                     " input points");
  }
  auto top = topk(weights, l);
  Retrieved<T> r;
  r.values = reshape(gather_rows(f_in, top.indices, Shape{weights.dim(0), l}), Shape{weights.dim(0), l});
  r.indices = std::move(top.indices);
  return r;
}

namespace {

template <typename T>
ProjectionMlp<T> make_projection(std::size_t hidden, std::size_t embed, std::mt19937_64& rng) {
  return ProjectionMlp<T>{nn::Linear<T>(1, hidden, rng), nn::Linear<T>(hidden, embed, rng)};
}

// Grid on [-1, 1]^2 with ceil(sqrt(r)) columns; a single replica sits at 0.
template <typename T>
Tensor<T> grid_codes(std::size_t r) {
  const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(r))));
  std::vector<T> v(r * 2, T(0));
  if (side > 1) {
    for (std::size_t k = 0; k < r; ++k) {
      v[k * 2] = static_cast<T>(-1.0 + 2.0 * static_cast<double>(k % side) / static_cast<double>(side - 1));
      v[k * 2 + 1] = static_cast<T>(-1.0 + 2.0 * static_cast<double>(k / side) / static_cast<double>(side - 1));
    }
  }
  return Tensor<T>({r, 2}, std::move(v));
}

template <typename T>
Tensor<T> broadcast_row(const Tensor<T>& row, std::size_t n) {
  return gather_rows(row, std::vector<std::size_t>(n, 0), Shape{n});
}

}  // namespace

template <typename T>
Prn<T>::Prn(const PrnConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t gd = config_.global_dim;
  enc1 = nn::Linear<T>(3, 64, rng);
  enc2 = nn::Linear<T>(64, 128, rng);
  enc3 = nn::Linear<T>(256, 256, rng);
  enc4 = nn::Linear<T>(256, gd, rng);
  dec1 = nn::Linear<T>(gd, config_.decoder_hidden, rng);
  dec2 = nn::Linear<T>(config_.decoder_hidden, config_.decoder_hidden, rng);
  dec3 = nn::Linear<T>(config_.decoder_hidden, config_.decoded_points() * 3, rng);
  if (config_.coarse_only) return;
  const std::size_t ah = config_.attention_hidden, ed = config_.embed_dim;
  query_pos = make_projection<T>(ah, ed, rng);
  key_pos = make_projection<T>(ah, ed, rng);
  query_cur = make_projection<T>(ah, ed, rng);
  key_cur = make_projection<T>(ah, ed, rng);
  const std::size_t l = config_.l_retrieve, h = config_.refine_hidden;
  // Fan-in of the whole first layer sets the shared init bound.
  const std::size_t fan_in = 3 + 2 * l + 2 + gd + 2;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  ref1_point.weight = nn::uniform_init<T>({3 + 2 * l + 2, h}, bound, rng);
  ref1_point.bias = nn::uniform_init<T>({h}, bound, rng);
  ref1_global.weight = nn::uniform_init<T>({gd, h}, bound, rng);
  ref1_code.weight = nn::uniform_init<T>({2, h}, bound, rng);
  ref2 = nn::Linear<T>(h, h / 2, rng);
  ref3 = nn::Linear<T>(h / 2, 3, rng, /*zero=*/true);
  codes_ = grid_codes<T>(config_.upsample_ratio());
}

template <typename T>
Tensor<T> Prn<T>::encode_global(const Tensor<T>& p_in) const {
  if (p_in.rank() != 2 || p_in.dim(1) != 3) {
    throw ShapeError("encode_global: expected N x 3 points, got " + to_string(p_in.shape()));
  }
  const std::size_t n = p_in.dim(0);
  const auto f1 = enc2(relu(enc1(p_in)));  // n x 128
  const auto g1 = max(f1, 0);              // 128
  const auto joined = concat<T>({f1, broadcast_row(reshape(g1, Shape{1, g1.size()}), n)}, 1);
  const auto f2 = enc4(relu(enc3(joined)));
  return reshape(max(f2, 0), Shape{1, config_.global_dim});
}

template <typename T>
Tensor<T> Prn<T>::decode_coarse(const Tensor<T>& global) const {
  const auto y = dec3(dec2(relu(dec1(global))));
  return reshape(y, Shape{config_.decoded_points(), 3});
}

template <typename T>
Tensor<T> Prn<T>::refine(const Tensor<T>& p_c, const Tensor<T>& e_pos, const Tensor<T>& e_cur,
                         const Tensor<T>& f_pos_c, const Tensor<T>& f_cur_c, const Tensor<T>& global) const {
  const std::size_t nc = p_c.dim(0), r = config_.upsample_ratio(), m = nc * r;
  std::vector<std::size_t> rep(m), tile(m);
  for (std::size_t i = 0; i < m; ++i) {
    rep[i] = i / r;
    tile[i] = i % r;
  }
  const auto point_part = ref1_point(concat<T>({p_c, e_pos, e_cur, f_pos_c, f_cur_c}, 1));  // nc x h
  const auto code_part = ref1_code(codes_);                                                 // r x h
  const auto global_part = reshape(ref1_global(global), Shape{config_.refine_hidden});
  auto h1 = add(add(gather_rows(point_part, rep, Shape{m}), gather_rows(code_part, tile, Shape{m})), global_part);
  const auto h2 = relu(ref2(relu(h1)));
  const auto offset = mul_scalar(tanh(ref3(h2)), static_cast<T>(config_.offset_scale));
  return add(gather_rows(p_c, rep, Shape{m}), offset);
}

template <typename T>
PrnOutput<T> Prn<T>::forward(const Tensor<T>& p_in, const ForwardOptions& options) const {
  PrnOutput<T> out;
  out.global = encode_global(p_in);
  out.coarse = decode_coarse(out.global);
  if (config_.coarse_only) {
    out.out = out.coarse;
    return out;
  }

  PatternEncodings computed;
  const PatternEncodings* encodings_in = options.input_encodings;
  if (encodings_in == nullptr) {
    computed = compute_encodings(to_cloud(p_in), config_.encodings, NormalOrientation{options.viewpoint});
    encodings_in = &computed;
  }
  // Coarse encodings are features of the current prediction, not part of the graph.
  out.coarse_encodings = options.coarse_encodings != nullptr
                             ? *options.coarse_encodings
                             : compute_encodings(to_cloud(out.coarse), config_.encodings);
  const auto& enc_c = out.coarse_encodings;

  const auto f_pos_in = encoding_column<T>(encodings_in->position);
  const auto f_cur_in = encoding_column<T>(encodings_in->curvature);
  const auto f_pos_c = encoding_column<T>(enc_c.position);
  const auto f_cur_c = encoding_column<T>(enc_c.curvature);
  const std::size_t l = config_.l_retrieve, nc = config_.n_coarse;

  out.position = retrieve_top_l(attention_weights(query_pos, key_pos, f_pos_c, f_pos_in), f_pos_in, l);
  out.curvature = retrieve_top_l(attention_weights(query_cur, key_cur, f_cur_c, f_cur_in), f_cur_in, l);
  const auto e_pos = config_.use_position ? out.position.values : Tensor<T>::zeros({nc, l});
  const auto e_cur = config_.use_curvature ? out.curvature.values : Tensor<T>::zeros({nc, l});
  out.out = refine(out.coarse, e_pos, e_cur, f_pos_c, f_cur_c, out.global);
  return out;
}

#define SCANFILL_INSTANTIATE_PRN(T)                                                                       \
  template class Prn<T>;                                                                                 \
  template Tensor<T> encoding_column<T>(const EncodingVector&);                                          \
  template Tensor<T> attention_weights(const ProjectionMlp<T>&, const ProjectionMlp<T>&, const Tensor<T>&, \
                                       const Tensor<T>&);                                                \
  template Retrieved<T> retrieve_top_l(const Tensor<T>&, const Tensor<T>&, std::size_t);

SCANFILL_INSTANTIATE_PRN(float)
SCANFILL_INSTANTIATE_PRN(double)

}  // namespace scanfill
