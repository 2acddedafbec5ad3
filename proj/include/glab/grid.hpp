#pragma once

#include <cmath>
#include <cstddef>

#include "glab/error.hpp"

namespace glab {

/// Uniform grid t_k = k * T / n on [0, T].
class TimeGrid {
 public:
  TimeGrid(double horizon, std::size_t n_steps) : horizon_(horizon), n_steps_(n_steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon))
      throw InvalidArgument("time grid horizon must be positive and finite");
    if (n_steps < 1) throw InvalidArgument("time grid needs at least one step");
  }

  double horizon() const noexcept { return horizon_; }
  std::size_t n_steps() const noexcept { return n_steps_; }
  std::size_t n_nodes() const noexcept { return n_steps_ + 1; }
  double dt() const noexcept { return horizon_ / static_cast<double>(n_steps_); }
  double time(std::size_t k) const noexcept {
    return k == n_steps_ ? horizon_ : horizon_ * static_cast<double>(k) / static_cast<double>(n_steps_);
  }

  /// Largest node index k with t_k <= t (clamped to the grid).
  std::size_t floor_index(double t) const noexcept {
    if (t <= 0.0) return 0;
    const double r = t / dt();
    auto k = static_cast<std::size_t>(std::floor(r + 1e-9));
    return k > n_steps_ ? n_steps_ : k;
  }

  friend bool operator==(const TimeGrid& a, const TimeGrid& b) noexcept {
    return a.horizon_ == b.horizon_ && a.n_steps_ == b.n_steps_;
  }

 private:
  double horizon_;
  std::size_t n_steps_;
};

}  // namespace glab
