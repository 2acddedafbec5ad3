#pragma once

// Volatility uncertainty set, the G-function, and finite scenario families
// standing in for the measure set of a one-dimensional G-Brownian motion.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "glab/error.hpp"
#include "glab/grid.hpp"

namespace glab {

/// Bounds [sigma_low_sq, sigma_high_sq] on the quadratic-variation density.
struct VolatilityBounds {
  double sigma_low_sq = 0.25;
  double sigma_high_sq = 1.0;

  void validate() const {
    if (!(sigma_low_sq > 0.0) || !std::isfinite(sigma_high_sq) || sigma_low_sq > sigma_high_sq)
      throw BoundsError("volatility bounds need 0 < sigma_low_sq <= sigma_high_sq");
  }
  double sigma_low() const { return std::sqrt(sigma_low_sq); }
  double sigma_high() const { return std::sqrt(sigma_high_sq); }

  /// Membership of a squared volatility, allowing a few ulps of rounding.
  bool contains_sq(double v) const noexcept {
    const double slack = 1e-12 * sigma_high_sq;
    return v >= sigma_low_sq - slack && v <= sigma_high_sq + slack;
  }
  double clamp_sq(double v) const noexcept { return std::clamp(v, sigma_low_sq, sigma_high_sq); }
};

/// G(a) = 1/2 (sigma_high^2 a^+ - sigma_low^2 a^-).
inline double g_function(double a, const VolatilityBounds& bounds) {
  return 0.5 * (bounds.sigma_high_sq * std::max(a, 0.0) - bounds.sigma_low_sq * std::max(-a, 0.0));
}

/// Rule of an adapted scenario: volatility for step k given b(t_0..t_k).
using AdaptedRule = std::function<double(std::size_t step, double t, std::span<const double> b_history)>;

namespace rule {
struct Constant {
  double theta;
};
/// One volatility per grid step, piecewise constant and left-continuous.
struct Step {
  std::vector<double> thetas;
};
struct Adapted {
  AdaptedRule rule;
};
}  // namespace rule

using RuleSpec = std::variant<rule::Constant, rule::Step, rule::Adapted>;

/// One volatility path theta(t), i.e. one measure P^theta of the family.
/// Immutable after construction.
class ScenarioProcess {
 public:
  enum class Kind { constant, step, adapted };

  ScenarioProcess(RuleSpec spec, const VolatilityBounds& bounds, const TimeGrid& grid, std::string label)
      : spec_(std::move(spec)), bounds_(bounds), grid_(grid), label_(std::move(label)) {
    bounds_.validate();
    if (const auto* c = std::get_if<rule::Constant>(&spec_)) {
      check(c->theta);
    } else if (const auto* s = std::get_if<rule::Step>(&spec_)) {
      if (s->thetas.size() != grid_.n_steps())
        throw InvalidArgument("step scenario needs one volatility per grid step");
      for (double v : s->thetas) check(v);
    } else if (!std::get<rule::Adapted>(spec_).rule) {
      throw InvalidArgument("adapted scenario needs a rule");
    }
    if (label_.empty()) label_ = default_label();
  }

  Kind kind() const noexcept { return static_cast<Kind>(spec_.index()); }
  /// Constant and step scenarios are deterministic, hence Markovian in the state.
  bool is_markovian() const noexcept { return kind() != Kind::adapted; }
  const std::string& label() const noexcept { return label_; }
  const VolatilityBounds& bounds() const noexcept { return bounds_; }
  const TimeGrid& grid() const noexcept { return grid_; }

  /// Volatility on step k; b_history holds b(t_0..t_k) and nothing later.
  double theta(std::size_t step, std::span<const double> b_history) const {
    switch (kind()) {
      case Kind::constant:
        return std::get<rule::Constant>(spec_).theta;
      case Kind::step:
        return std::get<rule::Step>(spec_).thetas.at(step);
      case Kind::adapted: {
        const double v = std::get<rule::Adapted>(spec_).rule(step, grid_.time(step), b_history);
        check(v);
        return v;
      }
    }
    return 0.0;
  }

  /// theta^2 on step k for deterministic scenarios.
  std::optional<double> deterministic_theta_sq(std::size_t step) const {
    if (!is_markovian()) return std::nullopt;
    const double v = theta(step, {});
    return bounds_.clamp_sq(v * v);
  }

 private:
  void check(double theta) const {
    if (!std::isfinite(theta) || theta < 0.0 || !bounds_.contains_sq(theta * theta)) {
      std::ostringstream os;
      os << "volatility " << theta << " outside [" << bounds_.sigma_low() << ", " << bounds_.sigma_high() << "]";
      throw BoundsError(os.str());
    }
  }

  std::string default_label() const {
    std::ostringstream os;
    switch (kind()) {
      case Kind::constant:
        os << "const(theta_sq=" << std::get<rule::Constant>(spec_).theta * std::get<rule::Constant>(spec_).theta
           << ")";
        break;
      case Kind::step:
        os << "step";
        break;
      case Kind::adapted:
        os << "adapted";
        break;
    }
    return os.str();
  }

  RuleSpec spec_;
  VolatilityBounds bounds_;
  TimeGrid grid_;
  std::string label_;
};

inline ScenarioProcess make_scenario(RuleSpec spec, const VolatilityBounds& bounds, const TimeGrid& grid,
                                     std::string label = {}) {
  return ScenarioProcess(std::move(spec), bounds, grid, std::move(label));
}

/// Ordered, non-empty list of scenarios on one grid.
class ScenarioFamily {
 public:
  explicit ScenarioFamily(std::vector<ScenarioProcess> members) : members_(std::move(members)) {
    if (members_.empty()) throw InvalidArgument("scenario family must be non-empty");
    for (const auto& m : members_)
      if (!(m.grid() == members_.front().grid()))
        throw InvalidArgument("scenario family members must share one time grid");
  }

  std::size_t size() const noexcept { return members_.size(); }
  const ScenarioProcess& operator[](std::size_t i) const { return members_.at(i); }
  const TimeGrid& grid() const noexcept { return members_.front().grid(); }
  auto begin() const noexcept { return members_.begin(); }
  auto end() const noexcept { return members_.end(); }
  const std::vector<ScenarioProcess>& members() const noexcept { return members_; }

  /// Concatenation; both families must share the grid.
  ScenarioFamily operator+(const ScenarioFamily& other) const {
    auto all = members_;
    all.insert(all.end(), other.members_.begin(), other.members_.end());
    return ScenarioFamily(std::move(all));
  }

 private:
  std::vector<ScenarioProcess> members_;
};

namespace family {
/// n constant scenarios with theta^2 equally spaced on [sigma_low^2, sigma_high^2].
struct Constants {
  std::size_t n;
};
/// Volatility sigma_high until t*, then sigma_low or sigma_high by the sign of B(t*).
struct BangBangOnSign {
  double switch_time;
};
struct Custom {
  std::vector<ScenarioProcess> members;
};
}  // namespace family

using FamilyMode = std::variant<family::Constants, family::BangBangOnSign, family::Custom>;

inline ScenarioFamily canonical_family(const VolatilityBounds& bounds, const TimeGrid& grid, const FamilyMode& mode) {
  bounds.validate();
  if (const auto* c = std::get_if<family::Constants>(&mode)) {
    if (c->n < 1) throw InvalidArgument("constants(n) needs n >= 1");
    std::vector<ScenarioProcess> members;
    members.reserve(c->n);
    for (std::size_t i = 0; i < c->n; ++i) {
      double v = c->n == 1 ? bounds.sigma_high_sq
                           : bounds.sigma_low_sq + (bounds.sigma_high_sq - bounds.sigma_low_sq) *
                                                       static_cast<double>(i) / static_cast<double>(c->n - 1);
      members.push_back(make_scenario(rule::Constant{std::sqrt(v)}, bounds, grid));
    }
    return ScenarioFamily(std::move(members));
  }
  if (const auto* bb = std::get_if<family::BangBangOnSign>(&mode)) {
    if (!(bb->switch_time > 0.0) || bb->switch_time >= grid.horizon())
      throw InvalidArgument("switch time must lie inside (0, T)");
    const std::size_t k_switch = grid.floor_index(bb->switch_time);
    const double lo = bounds.sigma_low();
    const double hi = bounds.sigma_high();
    auto make = [&](bool high_when_positive, std::string label) {
      AdaptedRule r = [k_switch, lo, hi, high_when_positive](std::size_t step, double,
                                                             std::span<const double> b) {
        if (step < k_switch) return hi;
        const bool positive = b[k_switch] > 0.0;
        return positive == high_when_positive ? hi : lo;
      };
      return make_scenario(rule::Adapted{std::move(r)}, bounds, grid, std::move(label));
    };
    std::ostringstream t;
    t << bb->switch_time;
    std::vector<ScenarioProcess> members;
    members.push_back(make(true, "bang_bang(t=" + t.str() + ",high_if_up)"));
    members.push_back(make(false, "bang_bang(t=" + t.str() + ",low_if_up)"));
    return ScenarioFamily(std::move(members));
  }
  return ScenarioFamily(std::get<family::Custom>(mode).members);
}

}  // namespace glab
