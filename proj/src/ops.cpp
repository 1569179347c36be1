#include "scanfill/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace scanfill::ad {

namespace {

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out = shape;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}

// Index maps from each output element to the contributing a/b elements.
struct Broadcast {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia, ib;
};

Broadcast make_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  bc.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1) {
      bc.out[i] = pa[i];
    } else if (pa[i] == 1) {
      bc.out[i] = pb[i];
    } else {
      throw ShapeError(std::string(op) + ": cannot broadcast shapes " + to_string(a) + " and " +
                       to_string(b));
    }
  }
  std::vector<std::size_t> sa(rank, 0), sb(rank, 0);
  std::size_t stride_a = 1, stride_b = 1;
  for (std::size_t i = rank; i-- > 0;) {
    sa[i] = pa[i] == 1 ? 0 : stride_a;
    sb[i] = pb[i] == 1 ? 0 : stride_b;
    stride_a *= pa[i];
    stride_b *= pb[i];
  }
  const std::size_t total = numel(bc.out);
  bc.ia.resize(total);
  bc.ib.resize(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t xa = 0, xb = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    bc.ia[flat] = xa;
    bc.ib[flat] = xb;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      xa += sa[d];
      xb += sb[d];
      if (counter[d] < bc.out[d]) break;
      xa -= sa[d] * counter[d];
      xb -= sb[d] * counter[d];
      counter[d] = 0;
    }
  }
  return bc;
}

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f, DA da, DB db) {
  auto bc = std::make_shared<Broadcast>(make_broadcast(a.shape(), b.shape(), op));
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> out(numel(bc->out));
  if (bc->same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[bc->ia[i]], bv[bc->ib[i]]);
  }
  return custom_op<T>(bc->out, std::move(out), {a, b},
                      [a, b, bc, da, db](std::span<const T> g, std::vector<std::span<T>>& gi) {
                        const auto av = a.data();
                        const auto bv = b.data();
                        const std::size_t n = g.size();
                        for (std::size_t i = 0; i < n; ++i) {
                          const std::size_t ja = bc->same ? i : bc->ia[i];
                          const std::size_t jb = bc->same ? i : bc->ib[i];
                          if (!gi[0].empty()) gi[0][ja] += g[i] * da(av[ja], bv[jb]);
                          if (!gi[1].empty()) gi[1][jb] += g[i] * db(av[ja], bv[jb]);
                        }
                      });
}

// Unary op whose derivative is expressed through input x and output y.
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& a, F f, D d) {
  const auto av = a.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  auto y = std::make_shared<std::vector<T>>(out);
  return custom_op<T>(a.shape(), std::move(out), {a},
                      [a, y, d](std::span<const T> g, std::vector<std::span<T>>& gi) {
                        const auto av = a.data();
                        for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * d(av[i], (*y)[i]);
                      });
}

template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

template <typename T>
void im2col(const T* img, std::size_t channels, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow,
            T* cols) {
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T* row = cols + ((c * kh + ky) * kw + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                ix < static_cast<std::ptrdiff_t>(w);
            row[oy * ow + ox] = inside ? img[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow,
            T* img) {
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T* row = cols + ((c * kh + ky) * kw + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            img[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += row[oy * ow + ox];
          }
        }
      }
}

}  // namespace

namespace detail {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      if (aip == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
                [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
                [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
                [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> squared_difference(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "squared_difference", [](T x, T y) { return (x - y) * (x - y); },
                [](T x, T y) { return T(2) * (x - y); }, [](T x, T y) { return T(2) * (y - x); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& a, T p) {
  return unary(a, [p](T x) { return std::pow(x, p); },
               [p](T x, T) { return p * std::pow(x, p - T(1)); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  return unary(a, [slope](T x) { return x > T(0) ? x : slope * x; },
               [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::sqrt(x); },
               [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  const std::size_t ax = normalize_axis(axis, a.rank(), "softmax");
  const auto s = split_axis(a.shape(), ax);
  const auto av = a.data();
  std::vector<T> out(av.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, av[base + j * s.inner]);
      T total = 0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const T e = std::exp(av[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= total;
    }
  auto y = std::make_shared<std::vector<T>>(out);
  return custom_op<T>(a.shape(), std::move(out), {a},
                      [y, s](std::span<const T> g, std::vector<std::span<T>>& gi) {
                        for (std::size_t o = 0; o < s.outer; ++o)
                          for (std::size_t in = 0; in < s.inner; ++in) {
                            const std::size_t base = o * s.n * s.inner + in;
                            T dot = 0;
                            for (std::size_t j = 0; j < s.n; ++j)
                              dot += g[base + j * s.inner] * (*y)[base + j * s.inner];
                            for (std::size_t j = 0; j < s.n; ++j) {
                              const std::size_t idx = base + j * s.inner;
                              gi[0][idx] += (*y)[idx] * (g[idx] - dot);
                            }
                          }
                      });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t rank = parts[0].rank();
  const std::size_t ax = normalize_axis(axis, rank, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == rank;
    for (std::size_t d = 0; ok && d < rank; ++d) ok = d == ax || p.dim(d) == parts[0].dim(d);
    if (!ok) {
      throw ShapeError("concat: shape " + to_string(p.shape()) + " does not conform with " +
                       to_string(parts[0].shape()) + " along axis " + std::to_string(ax));
    }
    out_shape[ax] += p.dim(ax);
  }
  const auto s = split_axis(out_shape, ax);
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.dim(ax) * s.inner;
    const auto pv = p.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * s.n * s.inner + offset * s.inner));
    offset += p.dim(ax);
  }
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(ax));
  return custom_op<T>(out_shape, std::move(out), parts,
                      [s, offsets, widths](std::span<const T> g, std::vector<std::span<T>>& gi) {
                        for (std::size_t k = 0; k < gi.size(); ++k) {
                          if (gi[k].empty()) continue;
                          const std::size_t chunk = widths[k] * s.inner;
                          for (std::size_t o = 0; o < s.outer; ++o) {
                            const T* src = g.data() + o * s.n * s.inner + offsets[k] * s.inner;
                            T* dst = gi[k].data() + o * chunk;
                            for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                          }
                        }
                      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return custom_op<T>(std::move(shape), std::move(out), {a},
                      [](std::span<const T> g, std::vector<std::span<T>>& gi) {
                        for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + to_string(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  return custom_op<T>({c, r}, transposed(a.data().data(), r, c), {a},
                      [r, c](std::span<const T> g, std::vector<std::span<T>>& gi) {
                        for (std::size_t i = 0; i < r; ++i)
                          for (std::size_t j = 0; j < c; ++j) gi[0][i * c + j] += g[j * r + i];
                      });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<std::size_t>& indices, Shape index_shape) {
  if (a.rank() == 0) throw ShapeError("gather_rows: cannot gather from a scalar");
  if (numel(index_shape) != indices.size()) {
    throw ShapeError("gather_rows: index shape " + to_string(index_shape) + " does not match " +
                     std::to_string(indices.size()) + " indices");
  }
  const std::size_t rows = a.dim(0);
  const std::size_t row = a.size() / std::max<std::size_t>(rows, 1);
  Shape out_shape = index_shape;
  out_shape.insert(out_shape.end(), a.shape().begin() + 1, a.shape().end());
  std::vector<T> out(indices.size() * row);
  const auto av = a.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                       std::to_string(rows) + " rows");
    }
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(indices[i] * row), row,
                out.begin() + static_cast<std::ptrdiff_t>(i * row));
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(indices);
  return custom_op<T>(std::move(out_shape), std::move(out), {a},
                      [idx, row](std::span<const T> g, std::vector<std::span<T>>& gi) {
                        for (std::size_t i = 0; i < idx->size(); ++i) {
                          T* dst = gi[0].data() + (*idx)[i] * row;
                          const T* src = g.data() + i * row;
                          for (std::size_t k = 0; k < row; ++k) dst[k] += src[k];
                        }
                      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, int axis) {
  const std::size_t ax = normalize_axis(axis, a.rank(), "sum");
  const auto s = split_axis(a.shape(), ax);
  const auto av = a.data();
  std::vector<T> out(s.outer * s.inner, T(0));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.n; ++j)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += av[(o * s.n + j) * s.inner + in];
  return custom_op<T>(drop_axis(a.shape(), ax), std::move(out), {a},
                      [s](std::span<const T> g, std::vector<std::span<T>>& gi) {
                        for (std::size_t o = 0; o < s.outer; ++o)
                          for (std::size_t j = 0; j < s.n; ++j)
                            for (std::size_t in = 0; in < s.inner; ++in)
                              gi[0][(o * s.n + j) * s.inner + in] += g[o * s.inner + in];
                      });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, int axis) {
  const std::size_t ax = normalize_axis(axis, a.rank(), "mean");
  return mul_scalar(sum(a, axis), T(1) / static_cast<T>(a.dim(ax)));
}

namespace {

template <typename T, typename Better>
Tensor<T> reduce_extreme(const Tensor<T>& a, int axis, const char* op, Better better) {
  const std::size_t ax = normalize_axis(axis, a.rank(), op);
  const auto s = split_axis(a.shape(), ax);
  if (s.n == 0) throw ShapeError(std::string(op) + ": empty axis");
  const auto av = a.data();
  std::vector<T> out(s.outer * s.inner);
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      std::size_t best = o * s.n * s.inner + in;
      for (std::size_t j = 1; j < s.n; ++j) {
        const std::size_t idx = (o * s.n + j) * s.inner + in;
        if (better(av[idx], av[best])) best = idx;
      }
      out[o * s.inner + in] = av[best];
      (*arg)[o * s.inner + in] = best;
    }
  return custom_op<T>(drop_axis(a.shape(), ax), std::move(out), {a},
                      [arg](std::span<const T> g, std::vector<std::span<T>>& gi) {
                        for (std::size_t i = 0; i < g.size(); ++i) gi[0][(*arg)[i]] += g[i];
                      });
}

}  // namespace

template <typename T>
Tensor<T> max(const Tensor<T>& a, int axis) {
  return reduce_extreme(a, axis, "max", [](T x, T best) { return x > best; });
}

template <typename T>
Tensor<T> min(const Tensor<T>& a, int axis) {
  return reduce_extreme(a, axis, "min", [](T x, T best) { return x < best; });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  return custom_op<T>(Shape{}, {total}, {a}, [](std::span<const T> g, std::vector<std::span<T>>& gi) {
    for (auto& v : gi[0]) v += g[0];
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  if (a.size() == 0) throw ShapeError("mean_all: empty tensor");
  return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  return custom_op<T>({m, n}, std::move(out), {a, b},
                      [a, b, m, n, k](std::span<const T> g, std::vector<std::span<T>>& gi) {
                        if (!gi[0].empty()) {
                          const auto bt = transposed(b.data().data(), k, n);
                          detail::gemm_nn(m, k, n, g.data(), bt.data(), gi[0].data());
                        }
                        if (!gi[1].empty()) {
                          const auto at = transposed(a.data().data(), m, k);
                          detail::gemm_nn(k, n, m, at.data(), g.data(), gi[1].data());
                        }
                      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  if (input.rank() != 4 || weight.rank() != 4 || input.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input " + to_string(input.shape()) + " incompatible with weight " +
                     to_string(weight.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t batch = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oc = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw ShapeError("conv2d: kernel " + to_string(weight.shape()) + " larger than padded input " +
                     to_string(input.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != oc)) {
    throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " does not match " +
                     std::to_string(oc) + " output channels");
  }
  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kw) / stride + 1;
  const std::size_t ckk = ch * kh * kw, spatial = oh * ow;

  std::vector<T> out(batch * oc * spatial, T(0));
  std::vector<T> cols(ckk * spatial);
  const T* in = input.data().data();
  const T* wt = weight.data().data();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    im2col(in + bi * ch * h * w, ch, h, w, kh, kw, stride, padding, oh, ow, cols.data());
    T* ob = out.data() + bi * oc * spatial;
    if (has_bias)
      for (std::size_t o = 0; o < oc; ++o) std::fill_n(ob + o * spatial, spatial, bias[o]);
    detail::gemm_nn(oc, spatial, ckk, wt, cols.data(), ob);
  }

  std::vector<Tensor<T>> inputs{input, weight};
  if (has_bias) inputs.push_back(bias);
  return custom_op<T>(
      {batch, oc, oh, ow}, std::move(out), inputs,
      [=](std::span<const T> g, std::vector<std::span<T>>& gi) {
        const T* in = input.data().data();
        std::vector<T> cols(ckk * spatial);
        std::vector<T> wt_t;
        if (!gi[0].empty()) wt_t = transposed(weight.data().data(), oc, ckk);
        for (std::size_t bi = 0; bi < batch; ++bi) {
          const T* gb = g.data() + bi * oc * spatial;
          if (!gi[1].empty()) {
            im2col(in + bi * ch * h * w, ch, h, w, kh, kw, stride, padding, oh, ow, cols.data());
            const auto cols_t = transposed(cols.data(), ckk, spatial);
            detail::gemm_nn(oc, ckk, spatial, gb, cols_t.data(), gi[1].data());
          }
          if (has_bias && !gi[2].empty())
            for (std::size_t o = 0; o < oc; ++o)
              for (std::size_t p = 0; p < spatial; ++p) gi[2][o] += gb[o * spatial + p];
          if (!gi[0].empty()) {
            std::vector<T> dcols(ckk * spatial, T(0));
            detail::gemm_nn(ckk, spatial, oc, wt_t.data(), gb, dcols.data());
            col2im(dcols.data(), ch, h, w, kh, kw, stride, padding, oh, ow,
                   gi[0].data() + bi * ch * h * w);
          }
        }
      });
}

template <typename T>
TopK<T> topk(const Tensor<T>& a, std::size_t k) {
  if (a.rank() != 2) throw ShapeError("topk: expected rank 2, got " + to_string(a.shape()));
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (k > cols) {
    throw ShapeError("topk: k = " + std::to_string(k) + " exceeds row length " + std::to_string(cols));
  }
  const auto av = a.data();
  std::vector<std::size_t> indices(rows * k);
  std::vector<std::size_t> order(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = av.data() + r * cols;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [row](std::size_t x, std::size_t y) {
                        return row[x] > row[y] || (row[x] == row[y] && x < y);
                      });
    for (std::size_t j = 0; j < k; ++j) indices[r * k + j] = r * cols + order[j];
  }
  // Gather through a flattened view so gradients reach the selected entries.
  auto flat = reshape(a, Shape{rows * cols});
  TopK<T> result{gather_rows(flat, indices, Shape{rows, k}), {}};
  for (auto& idx : indices) idx %= std::max<std::size_t>(cols, 1);
  result.indices = std::move(indices);
  return result;
}

template <typename T>
Tensor<T> scale_gradient(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  return custom_op<T>(a.shape(), std::move(out), {a},
                      [factor](std::span<const T> g, std::vector<std::span<T>>& gi) {
                        for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += factor * g[i];
                      });
}

#define SCANFILL_INSTANTIATE_OPS(T)                                                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> squared_difference(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                           \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                           \
  template Tensor<T> pow_scalar(const Tensor<T>&, T);                                           \
  template Tensor<T> neg(const Tensor<T>&);                                                     \
  template Tensor<T> square(const Tensor<T>&);                                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                    \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                           \
  template Tensor<T> tanh(const Tensor<T>&);                                                    \
  template Tensor<T> exp(const Tensor<T>&);                                                     \
  template Tensor<T> log(const Tensor<T>&);                                                     \
  template Tensor<T> sqrt(const Tensor<T>&);                                                    \
  template Tensor<T> softmax(const Tensor<T>&, int);                                            \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                          \
  template Tensor<T> transpose(const Tensor<T>&);                                               \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<std::size_t>&, Shape);     \
  template Tensor<T> sum(const Tensor<T>&, int);                                                \
  template Tensor<T> mean(const Tensor<T>&, int);                                               \
  template Tensor<T> max(const Tensor<T>&, int);                                                \
  template Tensor<T> min(const Tensor<T>&, int);                                                \
  template Tensor<T> sum_all(const Tensor<T>&);                                                 \
  template Tensor<T> mean_all(const Tensor<T>&);                                                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,  \
                            std::size_t);                                                       \
  template TopK<T> topk(const Tensor<T>&, std::size_t);                                         \
  template Tensor<T> scale_gradient(const Tensor<T>&, T);                                       \
  template void detail::gemm_nn(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);

SCANFILL_INSTANTIATE_OPS(float)
SCANFILL_INSTANTIATE_OPS(double)

}  // namespace scanfill::ad
