#include "scanfill/losses.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include <json.hpp>

#include "scanfill/knn.hpp"
#include "scanfill/ops.hpp"

namespace scanfill {

using namespace ad;

namespace {

template <typename T>
void require_points(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2 || t.dim(1) != 3) throw ShapeError(std::string(what) + ": expected N x 3, got " + to_string(t.shape()));
  if (t.dim(0) == 0) throw InvalidInput(std::string(what) + ": empty cloud");
}

}  // namespace

template <typename T>
Tensor<T> ucd(const Tensor<T>& q1, const Tensor<T>& q2, bool squared) {
  require_points(q1, "ucd");
  require_points(q2, "ucd");
  const std::size_t n1 = q1.dim(0), n2 = q2.dim(0);
  const auto a = q1.data();
  const auto b = q2.data();
  auto nearest = std::make_shared<std::vector<std::size_t>>(n1);
  auto dist = std::make_shared<std::vector<T>>(n1);
  T total = 0;
  for (std::size_t i = 0; i < n1; ++i) {
    const T x = a[i * 3], y = a[i * 3 + 1], z = a[i * 3 + 2];
    T best = std::numeric_limits<T>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < n2; ++j) {
      const T dx = x - b[j * 3], dy = y - b[j * 3 + 1], dz = z - b[j * 3 + 2];
      const T d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < best) {
        best = d2;
        arg = j;
      }
    }
    (*nearest)[i] = arg;
    (*dist)[i] = squared ? best : std::sqrt(best);
    total += (*dist)[i];
  }
  const T inv = T(1) / static_cast<T>(n1);
  return custom_op<T>({}, {total * inv}, {q1, q2},
                      [q1, q2, nearest, dist, squared, inv](std::span<const T> g, std::vector<std::span<T>>& gi) {
                        const auto a = q1.data();
                        const auto b = q2.data();
                        for (std::size_t i = 0; i < nearest->size(); ++i) {
                          const std::size_t j = (*nearest)[i];
                          T scale;
                          if (squared) {
                            scale = T(2) * g[0] * inv;
                          } else {
                            const T d = (*dist)[i];
                            if (d == T(0)) continue;
                            scale = g[0] * inv / d;
                          }
                          for (int k = 0; k < 3; ++k) {
                            const T diff = scale * (a[i * 3 + k] - b[j * 3 + k]);
                            if (!gi[0].empty()) gi[0][i * 3 + k] += diff;
                            if (!gi[1].empty()) gi[1][j * 3 + k] -= diff;
                          }
                        }
                      });
}

template <typename T>
Tensor<T> partial_matching_loss(const Tensor<T>& p_in, const Tensor<T>& p_c, const Tensor<T>& p_out, bool squared) {
  return add(ucd(p_in, p_c, squared), ucd(p_in, p_out, squared));
}

template <typename T>
Tensor<T> rendering_loss(const Tensor<T>& s0, const Tensor<T>& s_out, const Tensor<T>& s_c, double mask_threshold) {
  if (s0.shape() != s_out.shape() || s0.shape() != s_c.shape()) {
    throw ShapeError("rendering_loss: map shapes differ: " + to_string(s0.shape()) + ", " + to_string(s_out.shape()) +
                     ", " + to_string(s_c.shape()));
  }
  std::vector<T> mask(s_c.size());
  const auto sc = s_c.data();
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = sc[i] > static_cast<T>(mask_threshold) ? T(1) : T(0);
  const Tensor<T> b(s_c.shape(), std::move(mask));
  const auto term1 = mean_all(squared_difference(s0, s_out));
  const auto term2 = mean_all(mul(squared_difference(s0, s_c), b));
  return add(term1, term2);
}

template <typename T>
Tensor<T> density_loss(const Tensor<T>& cloud, std::size_t k_d) {
  require_points(cloud, "density_loss");
  const std::size_t n = cloud.dim(0);
  if (k_d == 0 || k_d + 1 > n) {
    throw InvalidInput("density_loss: k_d = " + std::to_string(k_d) + " needs more than " + std::to_string(n) +
                       " points (k_d must be <= N-1)");
  }
  const KnnIndex index(to_cloud(cloud));
  const auto nb = index.member_neighbors(k_d);
  std::vector<std::size_t> self(n * k_d);
  for (std::size_t i = 0; i < self.size(); ++i) self[i] = i / k_d;
  const auto diff = sub(gather_rows(cloud, self, Shape{n * k_d}), gather_rows(cloud, nb, Shape{n * k_d}));
  const auto d = sqrt(sum(square(diff), 1));                      // n*k
  const auto delta = mean(reshape(d, Shape{n, k_d}), 1);          // n
  return mean_all(square(sub(delta, mean_all(delta))));
}

template <typename T>
Tensor<T> gen_adv_loss(const Tensor<T>& scores) {
  if (scores.size() == 0) throw InvalidInput("gen_adv_loss: empty batch");
  return mean_all(square(add_scalar(scores, T(-1))));
}

template <typename T>
Tensor<T> disc_loss(const Tensor<T>& real, const Tensor<T>& fake) {
  if (real.size() == 0 || fake.size() == 0) throw InvalidInput("disc_loss: empty batch");
  return add(mean_all(square(add_scalar(real, T(-1)))), mean_all(square(fake)));
}

template <typename T>
Tensor<T> total_gen_loss(const Tensor<T>& l_part, const Tensor<T>& l_rend, const Tensor<T>& l_dens,
                         const Tensor<T>& l_gen, const LossWeights& w) {
  auto term = [](const Tensor<T>& l, double a) { return mul_scalar(l, static_cast<T>(a)); };
  return add(add(term(l_part, w.alpha_part), term(l_rend, w.alpha_rend)),
             add(term(l_dens, w.alpha_dens), term(l_gen, w.alpha_gen)));
}

std::vector<double> nearest_distances(const PointCloud& from, const PointCloud& to) {
  if (from.empty() || to.empty()) throw InvalidInput("nearest_distances: empty cloud");
  const KnnIndex index(to);
  std::vector<double> out(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) out[i] = index.query(from.positions[i], 1)[0].distance;
  return out;
}

MetricReport evaluate(const PointCloud& p_out, const PointCloud& p_gt) {
  const auto forward = nearest_distances(p_out, p_gt);
  const auto backward = nearest_distances(p_gt, p_out);
  auto mean_sq = [](const std::vector<double>& d) {
    double s = 0;
    for (double x : d) s += x * x;
    return s / static_cast<double>(d.size());
  };
  MetricReport r;
  r.precision = mean_sq(forward);
  r.coverage = mean_sq(backward);
  r.cd_l2 = r.precision + r.coverage;
  r.ucd = r.precision;
  r.uhd = *std::max_element(forward.begin(), forward.end());
  return r;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "sample_id,cd_l2,precision,coverage,ucd,uhd\n";
  os.precision(17);
  for (const auto& r : rows) {
    os << r.sample_id << ',' << r.report.cd_l2 << ',' << r.report.precision << ',' << r.report.coverage << ','
       << r.report.ucd << ',' << r.report.uhd << '\n';
  }
  if (!os) throw IoError("failed while writing " + path.string());
}

void write_metrics_summary(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  struct Acc {
    MetricReport sum;
    std::size_t n = 0;
    void add(const MetricReport& r) {
      sum.cd_l2 += r.cd_l2;
      sum.precision += r.precision;
      sum.coverage += r.coverage;
      sum.ucd += r.ucd;
      sum.uhd += r.uhd;
      ++n;
    }
    nlohmann::json scaled() const {
      const double s = 1e4 / static_cast<double>(std::max<std::size_t>(n, 1));
      return {{"count", n},
              {"cd_l2", sum.cd_l2 * s},
              {"precision", sum.precision * s},
              {"coverage", sum.coverage * s},
              {"ucd", sum.ucd * s},
              {"uhd", sum.uhd * s}};
    }
  };
  Acc overall;
  std::map<std::string, Acc> per_category;
  for (const auto& r : rows) {
    overall.add(r.report);
    per_category[r.category].add(r.report);
  }
  nlohmann::json j;
  j["scale"] = 1e4;
  j["overall"] = overall.scaled();
  for (const auto& [cat, acc] : per_category) j["categories"][cat] = acc.scaled();
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

#define SCANFILL_INSTANTIATE_LOSSES(T)                                                                     \
  template Tensor<T> ucd(const Tensor<T>&, const Tensor<T>&, bool);                                       \
  template Tensor<T> partial_matching_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, bool);   \
  template Tensor<T> rendering_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);        \
  template Tensor<T> density_loss(const Tensor<T>&, std::size_t);                                         \
  template Tensor<T> gen_adv_loss(const Tensor<T>&);                                                      \
  template Tensor<T> disc_loss(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> total_gen_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                    const LossWeights&);

SCANFILL_INSTANTIATE_LOSSES(float)
SCANFILL_INSTANTIATE_LOSSES(double)

}  // namespace scanfill
