// Adaptive Dormand-Prince 5(4) integration with a continuous extension,
// plus a fixed-step RK4 variant for reproducibility runs. Both produce a
// Trajectory that can be queried at arbitrary epochs inside the span.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace lrdv {

struct IntegratorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IntegratorSettings {
  double rtol = 1e-12;
  double atol = 1e-12;
  double initial_step = 0.0;  // 0 -> automatic
  double max_step = std::numeric_limits<double>::infinity();
  long max_steps = 5'000'000;
};

template <int N>
using StateVec = Eigen::Matrix<double, N, 1>;

// Piecewise-polynomial trajectory. Each interval stores the five nested
// coefficients of the Dormand-Prince continuous extension; a cubic Hermite
// interval is the same representation with the quartic coefficient zeroed.
template <int N>
class Trajectory {
 public:
  using Vec = StateVec<N>;

  Trajectory() = default;

  double start_time() const { return t_.front(); }
  double end_time() const { return t_.back(); }
  std::size_t node_count() const { return t_.size(); }
  const std::vector<double>& times() const { return t_; }
  const Vec& node(std::size_t i) const { return y_[i]; }

  bool contains(double t) const {
    const double a = std::min(t_.front(), t_.back());
    const double b = std::max(t_.front(), t_.back());
    const double slack = 1e-9 * (1.0 + b - a);
    return t >= a - slack && t <= b + slack;
  }

  Vec eval(double t) const {
    if (t_.size() < 2) return y_.front();
    const std::size_t i = locate(t);
    const double h = t_[i + 1] - t_[i];
    const double theta = (t - t_[i]) / h;
    const auto& c = coef_[i];
    return c[0] + theta * (c[1] + (1.0 - theta) * (c[2] + theta * (c[3] + (1.0 - theta) * c[4])));
  }

  void append_node(double t, const Vec& y) {
    t_.push_back(t);
    y_.push_back(y);
  }
  void append_interval(const std::array<Vec, 5>& c) { coef_.push_back(c); }
  const std::array<Vec, 5>& interval(std::size_t i) const { return coef_[i]; }

 private:
  std::size_t locate(double t) const {
    const bool fwd = t_.back() >= t_.front();
    std::size_t lo = 0, hi = t_.size() - 1;
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      const bool left = fwd ? (t < t_[mid]) : (t > t_[mid]);
      if (left)
        hi = mid;
      else
        lo = mid;
    }
    return lo;
  }

  std::vector<double> t_;
  std::vector<Vec> y_;
  std::vector<std::array<Vec, 5>> coef_;
};

namespace detail {

// Dormand-Prince 5(4) tableau.
constexpr double dp_c2 = 1.0 / 5, dp_c3 = 3.0 / 10, dp_c4 = 4.0 / 5, dp_c5 = 8.0 / 9;
constexpr double dp_a21 = 1.0 / 5;
constexpr double dp_a31 = 3.0 / 40, dp_a32 = 9.0 / 40;
constexpr double dp_a41 = 44.0 / 45, dp_a42 = -56.0 / 15, dp_a43 = 32.0 / 9;
constexpr double dp_a51 = 19372.0 / 6561, dp_a52 = -25360.0 / 2187, dp_a53 = 64448.0 / 6561,
                 dp_a54 = -212.0 / 729;
constexpr double dp_a61 = 9017.0 / 3168, dp_a62 = -355.0 / 33, dp_a63 = 46732.0 / 5247,
                 dp_a64 = 49.0 / 176, dp_a65 = -5103.0 / 18656;
constexpr double dp_b1 = 35.0 / 384, dp_b3 = 500.0 / 1113, dp_b4 = 125.0 / 192,
                 dp_b5 = -2187.0 / 6784, dp_b6 = 11.0 / 84;
constexpr double dp_e1 = 71.0 / 57600, dp_e3 = -71.0 / 16695, dp_e4 = 71.0 / 1920,
                 dp_e5 = -17253.0 / 339200, dp_e6 = 22.0 / 525, dp_e7 = -1.0 / 40;
// Coefficients of the order-4 continuous extension (Hairer/Norsett/Wanner).
constexpr double dp_d1 = -12715105075.0 / 11282082432.0;
constexpr double dp_d3 = 87487479700.0 / 32700410799.0;
constexpr double dp_d4 = -10690763975.0 / 1880347072.0;
constexpr double dp_d5 = 701980252875.0 / 199316789632.0;
constexpr double dp_d6 = -1453857185.0 / 822651844.0;
constexpr double dp_d7 = 69997945.0 / 29380423.0;

}  // namespace detail

template <int N, class Rhs>
Trajectory<N> integrate_dp54(Rhs&& f, const StateVec<N>& y0, double t0, double t1,
                             const IntegratorSettings& s = {}) {
  using Vec = StateVec<N>;
  namespace d = detail;
  if (!(t1 != t0) || !std::isfinite(t0) || !std::isfinite(t1))
    throw IntegratorError("integrate_dp54: degenerate time span");

  const double dir = (t1 > t0) ? 1.0 : -1.0;
  Trajectory<N> traj;
  double t = t0;
  Vec y = y0;
  Vec k1 = f(t, y);
  traj.append_node(t, y);

  double h = s.initial_step;
  if (h == 0.0) {
    const double scale = s.atol + s.rtol * y.cwiseAbs().maxCoeff();
    const double d0 = y.cwiseAbs().maxCoeff() / scale;
    const double d1n = k1.cwiseAbs().maxCoeff() / scale;
    h = (d0 < 1e-5 || d1n < 1e-5) ? 1e-6 : 0.01 * d0 / d1n;
    h = std::min(h, 0.1 * std::abs(t1 - t0));
    h = std::max(h, 1e-12);
  }
  h = std::abs(h) * dir;

  long steps = 0;
  while (dir * (t1 - t) > 0.0) {
    if (++steps > s.max_steps)
      throw IntegratorError("integrate_dp54: tolerance not met within max_steps");
    if (std::abs(h) < 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t)))
      throw IntegratorError("integrate_dp54: step size underflow");
    if (dir * (t + h - t1) > 0.0) h = t1 - t;
    if (std::abs(h) > s.max_step) h = s.max_step * dir;

    const Vec k2 = f(t + d::dp_c2 * h, Vec(y + h * (d::dp_a21 * k1)));
    const Vec k3 = f(t + d::dp_c3 * h, Vec(y + h * (d::dp_a31 * k1 + d::dp_a32 * k2)));
    const Vec k4 = f(t + d::dp_c4 * h, Vec(y + h * (d::dp_a41 * k1 + d::dp_a42 * k2 + d::dp_a43 * k3)));
    const Vec k5 = f(t + d::dp_c5 * h,
                     Vec(y + h * (d::dp_a51 * k1 + d::dp_a52 * k2 + d::dp_a53 * k3 + d::dp_a54 * k4)));
    const Vec k6 = f(t + h, Vec(y + h * (d::dp_a61 * k1 + d::dp_a62 * k2 + d::dp_a63 * k3 +
                                         d::dp_a64 * k4 + d::dp_a65 * k5)));
    const Vec y1 = y + h * (d::dp_b1 * k1 + d::dp_b3 * k3 + d::dp_b4 * k4 + d::dp_b5 * k5 + d::dp_b6 * k6);
    const Vec k7 = f(t + h, y1);

    const Vec err_vec =
        h * (d::dp_e1 * k1 + d::dp_e3 * k3 + d::dp_e4 * k4 + d::dp_e5 * k5 + d::dp_e6 * k6 + d::dp_e7 * k7);
    double err = 0.0;
    for (int i = 0; i < y.size(); ++i) {
      const double sc = s.atol + s.rtol * std::max(std::abs(y[i]), std::abs(y1[i]));
      const double e = err_vec[i] / sc;
      err += e * e;
    }
    err = std::sqrt(err / static_cast<double>(y.size()));

    if (err <= 1.0) {
      const Vec dy = y1 - y;
      std::array<Vec, 5> c;
      c[0] = y;
      c[1] = dy;
      c[2] = h * k1 - dy;
      c[3] = dy - h * k7 - c[2];
      c[4] = h * (d::dp_d1 * k1 + d::dp_d3 * k3 + d::dp_d4 * k4 + d::dp_d5 * k5 + d::dp_d6 * k6 +
                  d::dp_d7 * k7);
      t += h;
      y = y1;
      k1 = k7;  // FSAL
      traj.append_node(t, y);
      traj.append_interval(c);
      const double factor = (err == 0.0) ? 5.0 : std::min(5.0, 0.9 * std::pow(err, -0.2));
      h *= factor;
    } else {
      h *= std::max(0.2, 0.9 * std::pow(err, -0.2));
    }
  }
  return traj;
}

template <int N, class Rhs>
Trajectory<N> integrate_rk4(Rhs&& f, const StateVec<N>& y0, double t0, double t1, long n_steps) {
  using Vec = StateVec<N>;
  if (n_steps < 1) throw IntegratorError("integrate_rk4: need at least one step");
  Trajectory<N> traj;
  const double h = (t1 - t0) / static_cast<double>(n_steps);
  double t = t0;
  Vec y = y0;
  Vec f0 = f(t, y);
  traj.append_node(t, y);
  for (long i = 0; i < n_steps; ++i) {
    const Vec k1 = f0;
    const Vec k2 = f(t + 0.5 * h, Vec(y + 0.5 * h * k1));
    const Vec k3 = f(t + 0.5 * h, Vec(y + 0.5 * h * k2));
    const Vec k4 = f(t + h, Vec(y + h * k3));
    const Vec y1 = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    const double tn = (i + 1 == n_steps) ? t1 : t0 + (i + 1) * h;
    const Vec f1 = f(tn, y1);
    const Vec dy = y1 - y;
    std::array<Vec, 5> c;
    c[0] = y;
    c[1] = dy;
    c[2] = h * k1 - dy;
    c[3] = dy - h * f1 - c[2];
    c[4] = Vec::Zero(y.size());
    traj.append_node(tn, y1);
    traj.append_interval(c);
    t = tn;
    y = y1;
    f0 = f1;
  }
  return traj;
}

/// Cubic-Hermite trajectory through sample points with known derivatives.
template <int N>
Trajectory<N> hermite_trajectory(const std::vector<double>& t, const std::vector<StateVec<N>>& y,
                                 const std::vector<StateVec<N>>& dydt) {
  using Vec = StateVec<N>;
  if (t.size() < 2 || t.size() != y.size() || t.size() != dydt.size())
    throw std::invalid_argument("hermite_trajectory: inconsistent sample arrays");
  Trajectory<N> traj;
  traj.append_node(t[0], y[0]);
  for (std::size_t i = 0; i + 1 < t.size(); ++i) {
    const double h = t[i + 1] - t[i];
    const Vec dy = y[i + 1] - y[i];
    std::array<Vec, 5> c;
    c[0] = y[i];
    c[1] = dy;
    c[2] = h * dydt[i] - dy;
    c[3] = dy - h * dydt[i + 1] - c[2];
    c[4] = Vec::Zero(y[i].size());
    traj.append_node(t[i + 1], y[i + 1]);
    traj.append_interval(c);
  }
  return traj;
}

}  // namespace lrdv
