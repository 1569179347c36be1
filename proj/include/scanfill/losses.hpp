#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "scanfill/point_cloud.hpp"
#include "scanfill/tensor.hpp"

namespace scanfill {

/// Mean over q1 of the distance to the nearest point of q2 (squared when
/// `squared`). Differentiable in both clouds; a nearest-neighbour tie sends
/// the gradient to the smallest index.
template <typename T>
ad::Tensor<T> ucd(const ad::Tensor<T>& q1, const ad::Tensor<T>& q2, bool squared = false);

/// UCD(P_in, P_c) + UCD(P_in, P_out).
template <typename T>
ad::Tensor<T> partial_matching_loss(const ad::Tensor<T>& p_in, const ad::Tensor<T>& p_c,
                                    const ad::Tensor<T>& p_out, bool squared = false);

/// Mean squared error between s0 and s_out plus the squared error between s0
/// and s_c restricted to pixels where s_c exceeds `mask_threshold`. Both terms
/// are averaged over every pixel.
template <typename T>
ad::Tensor<T> rendering_loss(const ad::Tensor<T>& s0, const ad::Tensor<T>& s_out, const ad::Tensor<T>& s_c,
                             double mask_threshold = 0.5);

/// Population variance of the per-point mean distance to the k_d nearest
/// neighbours. Neighbour sets come from the current positions.
template <typename T>
ad::Tensor<T> density_loss(const ad::Tensor<T>& cloud, std::size_t k_d = 8);

/// mean((score - 1)^2)
template <typename T>
ad::Tensor<T> gen_adv_loss(const ad::Tensor<T>& scores);

/// mean((real - 1)^2) + mean(fake^2)
template <typename T>
ad::Tensor<T> disc_loss(const ad::Tensor<T>& real, const ad::Tensor<T>& fake);

struct LossWeights {
  double alpha_part = 1.0;
  double alpha_rend = 1.0;
  double alpha_dens = 1.0;
  double alpha_gen = 1.0;
};

template <typename T>
ad::Tensor<T> total_gen_loss(const ad::Tensor<T>& l_part, const ad::Tensor<T>& l_rend, const ad::Tensor<T>& l_dens,
                             const ad::Tensor<T>& l_gen, const LossWeights& w);

struct MetricReport {
  double cd_l2 = 0;
  double precision = 0;
  double coverage = 0;
  double ucd = 0;
  double uhd = 0;
};

/// Evaluation metrics of a prediction against ground truth, in double.
MetricReport evaluate(const PointCloud& p_out, const PointCloud& p_gt);

/// Nearest-neighbour distances from every point of `from` to `to`.
std::vector<double> nearest_distances(const PointCloud& from, const PointCloud& to);

struct MetricRow {
  std::string sample_id;
  std::string category;
  MetricReport report;
};

/// Per-sample CSV (sample_id, cd_l2, precision, coverage, ucd, uhd).
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
/// Per-category and overall means, scaled by 1e4.
void write_metrics_summary(const std::filesystem::path& path, const std::vector<MetricRow>& rows);

}  // namespace scanfill
