#include "scanfill/tensor.hpp"

#include <sstream>

namespace scanfill::ad {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t Tape::record(std::function<void()> node) {
  if (consumed_) throw GraphError("cannot record onto a consumed tape; call reset() first");
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

Tape* active_tape() { return g_active_tape; }

TapeGuard::TapeGuard(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeGuard::~TapeGuard() { g_active_tape = previous_; }

NoGradGuard::NoGradGuard() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = previous_; }

}  // namespace scanfill::ad
