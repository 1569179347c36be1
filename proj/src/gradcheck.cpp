#include "scanfill/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace scanfill::ad {

GradCheckResult grad_check(const std::function<Tensord(const Tensord&)>& fn, const Tensord& point,
                           double step, const std::vector<std::size_t>& coords) {
  Tensord x = point.detach();
  x.set_requires_grad();
  std::vector<double> analytic(x.size(), 0.0);
  {
    Tape tape;
    TapeGuard guard(tape);
    Tensord y = fn(x);
    if (y.size() != 1) throw ShapeError("grad_check: function must return a scalar, got " + to_string(y.shape()));
    if (y.requires_grad()) {
      backward(y);
      analytic = x.grad();
    }
  }

  std::vector<std::size_t> which = coords;
  if (which.empty()) {
    which.resize(x.size());
    std::iota(which.begin(), which.end(), std::size_t{0});
  }

  NoGradGuard no_grad;
  GradCheckResult result;
  std::vector<double> buf(point.data().begin(), point.data().end());
  for (std::size_t i : which) {
    const double orig = buf[i];
    buf[i] = orig + step;
    const double fp = fn(Tensord(point.shape(), buf)).item();
    buf[i] = orig - step;
    const double fm = fn(Tensord(point.shape(), buf)).item();
    buf[i] = orig;
    const double numeric = (fp - fm) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    const double err = std::abs(analytic[i] - numeric) / denom;
    if (i == which.front() || err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
      result.analytic = analytic[i];
      result.numeric = numeric;
    }
  }
  return result;
}

}  // namespace scanfill::ad
