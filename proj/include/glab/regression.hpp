#pragma once

// Least-squares projection on a small polynomial basis in the state.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

#include "glab/error.hpp"

namespace glab {

/// Basis functions phi_j(x) = w(x) * zhat^j, j = 0..degree, where z is x or
/// ln x, zhat is z standardized per time node (and continued linearly past the sampled
/// range), and w(x) = x^gamma when a weight power is given (1 otherwise).
struct BasisSpec {
  enum class Coordinate { state, log_state };
  int degree = 3;
  Coordinate coordinate = Coordinate::state;
  std::optional<double> weight_power;
};

/// Condition number above which a regression is refused.
inline constexpr double kMaxConditionNumber = 1e12;

/// The basis frozen at one time node (standardization included).
class NodeBasis {
 public:
  NodeBasis() = default;

  /// Fits the standardization on the sampled states.
  NodeBasis(const BasisSpec& spec, std::span<const double> x, std::span<const unsigned char> skip = {})
      : spec_(spec) {
    if (spec.degree < 0 || spec.degree > 12) throw InvalidArgument("basis degree must be in [0, 12]");
    double sum = 0.0, sq = 0.0;
    double zlo = std::numeric_limits<double>::infinity(), zhi = -zlo;
    std::size_t n = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!skip.empty() && skip[i]) continue;
      const double z = coord(x[i]);
      sum += z;
      sq += z * z;
      zlo = std::min(zlo, z);
      zhi = std::max(zhi, z);
      ++n;
    }
    center_ = n ? sum / static_cast<double>(n) : 0.0;
    const double var = n ? sq / static_cast<double>(n) - center_ * center_ : 0.0;
    scale_ = std::sqrt(std::max(var, 0.0));
    // A degenerate state (e.g. at t = 0) supports only the weight function.
    degree_ = scale_ > 1e-10 * std::max(1.0, std::abs(center_)) ? spec.degree : 0;
    if (scale_ <= 0.0) scale_ = 1.0;
    lo_ = n ? (zlo - center_) / scale_ : 0.0;
    hi_ = n ? (zhi - center_) / scale_ : 0.0;
  }

  std::size_t size() const noexcept { return static_cast<std::size_t>(degree_) + 1; }

  /// Weight and raw coordinate of x; shared by every basis built from the same spec.
  struct Point {
    double w = 1.0;
    double z = 0.0;
  };
  Point prepare(double x) const { return {weight(x), coord(x)}; }

  void evaluate(double x, std::span<double> out) const { evaluate(prepare(x), out); }

  /// Outside the fitted sample the polynomial continues along its tangent at
  /// the boundary; the weight still varies.
  void evaluate(Point pt, std::span<double> out) const {
    const double zr = (pt.z - center_) / scale_;
    const double z = std::clamp(zr, lo_, hi_);
    const double ext = zr - z;
    double zp = 1.0, zpm = 0.0;  // z^j, z^(j-1)
    for (std::size_t j = 0; j < size(); ++j) {
      out[j] = pt.w * (zp + static_cast<double>(j) * zpm * ext);
      zpm = zp;
      zp *= z;
    }
  }

  /// w(x); regression rows are divided by it so that a target of size w(x)
  /// has homoscedastic residuals.
  double weight(double x) const {
    if (!spec_.weight_power) return 1.0;
    return *spec_.weight_power == -1.0 ? 1.0 / x : std::pow(x, *spec_.weight_power);
  }

  double dot(std::span<const double> coeffs, double x) const {
    double phi[16];
    evaluate(x, std::span<double>(phi, size()));
    double acc = 0.0;
    for (std::size_t j = 0; j < size(); ++j) acc += coeffs[j] * phi[j];
    return acc;
  }

  /// d/dx of sum_j coeffs_j phi_j(x).
  double derivative(std::span<const double> coeffs, double x) const {
    const bool logc = spec_.coordinate == BasisSpec::Coordinate::log_state;
    const double zr = (coord(x) - center_) / scale_;
    const double z = std::clamp(zr, lo_, hi_);
    double poly = 0.0, dpoly = 0.0, zp = 1.0;
    for (std::size_t j = 0; j < size(); ++j) {
      poly += coeffs[j] * zp;
      if (j + 1 < size()) dpoly += coeffs[j + 1] * static_cast<double>(j + 1) * zp;
      zp *= z;
    }
    poly += dpoly * (zr - z);
    const double dz = (logc ? 1.0 / x : 1.0) / scale_;
    const double w = weight(x);
    const double dw = spec_.weight_power ? *spec_.weight_power * w / x : 0.0;
    return dw * poly + w * dpoly * dz;
  }

  /// Two fitted functions at the same point.
  std::pair<double, double> dot2(std::span<const double> a, std::span<const double> b, Point pt) const {
    double phi[16];
    evaluate(pt, std::span<double>(phi, size()));
    double ra = 0.0, rb = 0.0;
    for (std::size_t j = 0; j < size(); ++j) {
      ra += a[j] * phi[j];
      rb += b[j] * phi[j];
    }
    return {ra, rb};
  }

 private:
  double coord(double x) const { return spec_.coordinate == BasisSpec::Coordinate::log_state ? std::log(x) : x; }

  BasisSpec spec_;
  double center_ = 0.0;
  double scale_ = 1.0;
  double lo_ = 0.0, hi_ = 0.0;  // standardized sample range
  int degree_ = 0;
};

/// Accumulates normal equations row by row and solves them after column
/// equilibration.
class NormalEquations {
 public:
  explicit NormalEquations(std::size_t m) : gram_(Eigen::MatrixXd::Zero(m, m)), rhs_(Eigen::VectorXd::Zero(m)) {}

  void add(std::span<const double> row, double target) {
    const auto m = static_cast<Eigen::Index>(row.size());
    for (Eigen::Index i = 0; i < m; ++i) {
      rhs_(i) += row[i] * target;
      for (Eigen::Index j = 0; j <= i; ++j) gram_(i, j) += row[i] * row[j];
    }
    ++n_;
  }

  struct Solution {
    Eigen::VectorXd coeffs;
    double condition = 0.0;
  };

  /// Least-squares coefficients; condition is that of the equilibrated design.
  Solution solve() const {
    const Eigen::Index m = gram_.rows();
    Eigen::MatrixXd g = gram_.selfadjointView<Eigen::Lower>();
    Eigen::VectorXd d(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!(g(i, i) > 0.0)) throw SingularRegression("regression basis column vanishes on the sample; change the basis");
      d(i) = 1.0 / std::sqrt(g(i, i));
    }
    const Eigen::MatrixXd ge = d.asDiagonal() * g * d.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(ge, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    const double cond = lo > 0.0 ? std::sqrt(hi / lo) : std::numeric_limits<double>::infinity();
    if (!(cond <= kMaxConditionNumber)) {
      std::ostringstream os;
      os << "regression condition number " << cond << " exceeds " << kMaxConditionNumber
         << "; use a lower degree or a different basis";
      throw SingularRegression(os.str());
    }
    const Eigen::VectorXd y = ge.ldlt().solve(d.asDiagonal() * rhs_);
    return {d.asDiagonal() * y, cond};
  }

  std::size_t count() const noexcept { return n_; }

 private:
  Eigen::MatrixXd gram_;
  Eigen::VectorXd rhs_;
  std::size_t n_ = 0;
};

}  // namespace glab
