#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "scanfill/tensor.hpp"

// Differentiable operations. Binary elementwise ops broadcast with the usual
// trailing-axis rules. Negative axes count from the end.
namespace scanfill::ad {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
/// (a - b)^2, elementwise.
template <typename T> Tensor<T> squared_difference(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> pow_scalar(const Tensor<T>& a, T p);
template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);

template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, T slope);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
/// Square root; the derivative at exactly 0 is taken as 0.
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);

template <typename T> Tensor<T> softmax(const Tensor<T>& a, int axis);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
/// Swaps the two axes of a rank-2 tensor.
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

/// Selects rows (slices along axis 0). The result has shape
/// index_shape + a.shape[1:].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<std::size_t>& indices, Shape index_shape);

template <typename T> Tensor<T> sum(const Tensor<T>& a, int axis);
template <typename T> Tensor<T> mean(const Tensor<T>& a, int axis);
/// Max along an axis; the gradient goes to the first maximal element.
template <typename T> Tensor<T> max(const Tensor<T>& a, int axis);
template <typename T> Tensor<T> min(const Tensor<T>& a, int axis);
template <typename T> Tensor<T> sum_all(const Tensor<T>& a);
template <typename T> Tensor<T> mean_all(const Tensor<T>& a);

/// Rank-2 product (m x k)(k x n).
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// NCHW convolution with OIHW weights and an optional per-channel bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding);

template <typename T>
struct TopK {
  Tensor<T> values;                  // rows x k, descending
  std::vector<std::size_t> indices;  // rows x k, constant
};

/// Largest k entries of each row of a rank-2 tensor; ties go to the smaller
/// column index. Values are differentiable, indices are not.
template <typename T> TopK<T> topk(const Tensor<T>& a, std::size_t k);

/// Identity in the forward pass whose backward pass scales the incoming
/// gradient by `factor`. Used to inject faults into gradient checks.
template <typename T> Tensor<T> scale_gradient(const Tensor<T>& a, T factor);

namespace detail {
// Row-major kernels shared by matmul and conv2d. C accumulates.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
}  // namespace detail

}  // namespace scanfill::ad
