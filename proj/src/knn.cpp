#include "scanfill/knn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <string>
#include <utility>

namespace scanfill {

KnnIndex::KnnIndex(std::span<const Vec3> points, std::size_t leaf_size)
    : points_(points.begin(), points.end()), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
  if (points_.empty()) throw InvalidInput("cannot index an empty point set");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!points_[i].allFinite()) {
      throw InvalidInput("point " + std::to_string(i) + " has a non-finite coordinate");
    }
  }
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  nodes_.reserve(2 * points_.size() / leaf_size_ + 1);
  build(0, points_.size());
}

std::size_t KnnIndex::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.push_back(Node{begin, end});
  if (end - begin <= leaf_size_) return id;

  Vec3 lo = points_[order_[begin]], hi = lo;
  for (std::size_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (!(hi[axis] > lo[axis])) return id;  // all coincident: keep as a leaf

  const std::size_t mid = begin + (end - begin) / 2;
  auto first = order_.begin() + static_cast<std::ptrdiff_t>(begin);
  std::nth_element(first, order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) {
                     const double pa = points_[a][axis], pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  const std::size_t left = build(begin, mid);
  const std::size_t right = build(mid, end);
  Node& node = nodes_[id];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

std::vector<Neighbor> KnnIndex::query(const Vec3& q, std::size_t k,
                                      std::optional<std::size_t> exclude) const {
  const bool drops_self = exclude && *exclude < points_.size() && points_[*exclude] == q;
  const std::size_t available = points_.size() - (drops_self ? 1 : 0);
  if (k > available) {
    throw InvalidInput("k = " + std::to_string(k) + " exceeds the " + std::to_string(available) +
                       " candidate points (cloud size " + std::to_string(points_.size()) + ")");
  }
  if (k == 0) return {};

  using Entry = std::pair<double, std::size_t>;  // (squared distance, index); max-heap by default
  std::priority_queue<Entry> heap;
  // (node, squared distance from q to the node's half-space)
  std::vector<std::pair<std::size_t, double>> stack{{0, 0.0}};
  while (!stack.empty()) {
    const auto [id, bound] = stack.back();
    stack.pop_back();
    // Equal bounds are kept: they may hold a tie with a smaller index.
    if (heap.size() == k && bound > heap.top().first) continue;
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        const double d2 = (points_[idx] - q).squaredNorm();
        if (drops_self && idx == *exclude && d2 == 0.0) continue;
        const Entry e{d2, idx};
        if (heap.size() < k) {
          heap.push(e);
        } else if (e < heap.top()) {
          heap.pop();
          heap.push(e);
        }
      }
      continue;
    }
    const double diff = q[node.axis] - node.split;
    const std::size_t near = diff < 0 ? node.left : node.right;
    const std::size_t far = diff < 0 ? node.right : node.left;
    stack.emplace_back(far, std::max(bound, diff * diff));
    stack.emplace_back(near, bound);
  }
  std::vector<Neighbor> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = Neighbor{heap.top().second, std::sqrt(heap.top().first)};
    heap.pop();
  }
  return out;
}

std::vector<std::size_t> KnnIndex::member_neighbors(std::size_t k) const {
  std::vector<std::size_t> out(points_.size() * k);
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const auto nn = query(points_[i], k, i);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = nn[j].index;
  }
  return out;
}

}  // namespace scanfill
