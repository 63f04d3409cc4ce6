// Circular restricted three-body dynamics in the normalized synodic frame:
// effective potential, acceleration and its derivatives, Jacobi integral,
// equilibrium points, propagation and unit conversions.
#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

#include "lrdv/math.hpp"
#include "lrdv/ode.hpp"

namespace lrdv {

struct SingularPositionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RootSolveError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Normalized CR3BP system constants. Distances are in units of the primary
// separation, time in units of 1/omega (period / 2*pi), so the synodic
// angular rate is 1 and G*(M1+M2) is 1.
struct Cr3bpSystem {
  double mu;           // mass ratio M2/(M1+M2)
  double length_unit;  // km per normalized distance
  double period;       // seconds per synodic revolution
  double time_unit;    // seconds per normalized time

  Cr3bpSystem(double mass_ratio, double length_km, double period_s)
      : mu(mass_ratio), length_unit(length_km), period(period_s),
        time_unit(period_s / (2.0 * std::numbers::pi)) {
    if (!(mu > 0.0 && mu < 0.5)) throw std::invalid_argument("Cr3bpSystem: mu must be in (0, 0.5)");
    if (!(length_unit > 0.0)) throw std::invalid_argument("Cr3bpSystem: length_unit must be > 0");
    if (!(period > 0.0)) throw std::invalid_argument("Cr3bpSystem: period must be > 0");
  }

  static Cr3bpSystem earth_moon() { return Cr3bpSystem(0.01215, 384400.0, 2360591.424); }

  Vec3 earth_position() const { return Vec3(-mu, 0.0, 0.0); }
  Vec3 moon_position() const { return Vec3(1.0 - mu, 0.0, 0.0); }

  double velocity_unit() const { return length_unit / time_unit; }            // km/s
  double accel_unit() const { return length_unit / (time_unit * time_unit); } // km/s^2
};

struct SynodicState {
  Vec3 r = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  double t = 0.0;

  Vec6 as_vec() const {
    Vec6 y;
    y << r, v;
    return y;
  }
  static SynodicState from_vec(const Vec6& y, double t) {
    return SynodicState{y.head<3>(), y.tail<3>(), t};
  }
};

enum class Quantity { Length, Time, Velocity, Acceleration };

inline double to_si(const Cr3bpSystem& sys, double value, Quantity kind) {
  switch (kind) {
    case Quantity::Length: return value * sys.length_unit;
    case Quantity::Time: return value * sys.time_unit;
    case Quantity::Velocity: return value * sys.velocity_unit();
    case Quantity::Acceleration: return value * sys.accel_unit();
  }
  throw std::invalid_argument("to_si: unknown quantity kind");
}

inline double from_si(const Cr3bpSystem& sys, double value, Quantity kind) {
  switch (kind) {
    case Quantity::Length: return value / sys.length_unit;
    case Quantity::Time: return value / sys.time_unit;
    case Quantity::Velocity: return value / sys.velocity_unit();
    case Quantity::Acceleration: return value / sys.accel_unit();
  }
  throw std::invalid_argument("from_si: unknown quantity kind");
}

inline void require_nonsingular(const Cr3bpSystem& sys, const Vec3& r) {
  const double de = (r - sys.earth_position()).norm();
  const double dm = (r - sys.moon_position()).norm();
  if (de < 1e-12 || dm < 1e-12) {
    std::ostringstream msg;
    msg << "position coincides with a primary (|r-r_oe|=" << de << ", |r-r_om|=" << dm << ")";
    throw SingularPositionError(msg.str());
  }
}

/// Effective potential of the rotating frame, including the constant
/// -mu*(1-mu)/2 term.
inline double effective_potential(const Cr3bpSystem& sys, const Vec3& r) {
  require_nonsingular(sys, r);
  const double de = (r - sys.earth_position()).norm();
  const double dm = (r - sys.moon_position()).norm();
  return -0.5 * (r.x() * r.x() + r.y() * r.y()) - (1.0 - sys.mu) / de - sys.mu / dm -
         0.5 * sys.mu * (1.0 - sys.mu);
}

inline Vec3 potential_gradient(const Cr3bpSystem& sys, const Vec3& r) {
  require_nonsingular(sys, r);
  const Vec3 re = r - sys.earth_position();
  const Vec3 rm = r - sys.moon_position();
  const double de3 = std::pow(re.norm(), 3);
  const double dm3 = std::pow(rm.norm(), 3);
  Vec3 g = (1.0 - sys.mu) / de3 * re + sys.mu / dm3 * rm;
  g.x() -= r.x();
  g.y() -= r.y();
  return g;
}

/// (I - 3*d_hat*d_hat^T)/|d|^3, the Hessian of -1/|d|.
inline Mat3 gravity_gradient(const Vec3& d) {
  const double n = d.norm();
  const Vec3 u = d / n;
  return (Mat3::Identity() - 3.0 * u * u.transpose()) / (n * n * n);
}

inline Mat3 potential_hessian(const Cr3bpSystem& sys, const Vec3& r) {
  require_nonsingular(sys, r);
  Mat3 h = (1.0 - sys.mu) * gravity_gradient(r - sys.earth_position()) +
           sys.mu * gravity_gradient(r - sys.moon_position());
  h(0, 0) -= 1.0;
  h(1, 1) -= 1.0;
  return h;
}

inline Vec3 synodic_accel(const Cr3bpSystem& sys, const SynodicState& s) {
  const Vec3 g = potential_gradient(sys, s.r);
  return Vec3(2.0 * s.v.y() - g.x(), -2.0 * s.v.x() - g.y(), -g.z());
}

/// d(accel)/d(r) and d(accel)/d(v) of the synodic equations of motion.
inline Mat3 accel_position_jacobian(const Cr3bpSystem& sys, const Vec3& r) {
  return -potential_hessian(sys, r);
}

inline Mat3 accel_velocity_jacobian() {
  Mat3 m = Mat3::Zero();
  m(0, 1) = 2.0;
  m(1, 0) = -2.0;
  return m;
}

/// Time derivative of the synodic acceleration along a ballistic trajectory.
inline Vec3 synodic_jerk(const Cr3bpSystem& sys, const SynodicState& s) {
  return accel_position_jacobian(sys, s.r) * s.v + accel_velocity_jacobian() * synodic_accel(sys, s);
}

inline double jacobi_integral(const Cr3bpSystem& sys, const SynodicState& s) {
  return -(s.v.squaredNorm() + 2.0 * effective_potential(sys, s.r));
}

inline Vec6 cr3bp_rhs(const Cr3bpSystem& sys, const Vec6& y) {
  const SynodicState s = SynodicState::from_vec(y, 0.0);
  Vec6 dy;
  dy << s.v, synodic_accel(sys, s);
  return dy;
}

/// L1..L5 positions. Collinear points from a bracketed bisection of
/// dU/dx followed by a Newton polish; triangular points in closed form.
inline std::array<Vec3, 5> lagrange_points(const Cr3bpSystem& sys) {
  const double mu = sys.mu;
  auto ux = [&](double x) { return potential_gradient(sys, Vec3(x, 0.0, 0.0)).x(); };
  auto uxx = [&](double x) { return potential_hessian(sys, Vec3(x, 0.0, 0.0))(0, 0); };

  auto solve_on = [&](double lo, double hi, const char* name) {
    double flo = ux(lo), fhi = ux(hi);
    if (flo * fhi > 0.0) {
      std::ostringstream msg;
      msg << "lagrange_points: no sign change for " << name << " on [" << lo << ", " << hi
          << "] (f=" << flo << ", " << fhi << ")";
      throw RootSolveError(msg.str());
    }
    for (int i = 0; i < 80; ++i) {
      const double mid = 0.5 * (lo + hi);
      const double fm = ux(mid);
      if (flo * fm <= 0.0) {
        hi = mid;
        fhi = fm;
      } else {
        lo = mid;
        flo = fm;
      }
    }
    double x = 0.5 * (lo + hi);
    for (int i = 0; i < 8; ++i) {
      const double f = ux(x);
      const double df = uxx(x);
      if (df == 0.0) break;
      const double step = f / df;
      x -= step;
      if (x < lo || x > hi) x = 0.5 * (lo + hi);  // keep the bracket
      if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(x))) break;
    }
    if (std::abs(ux(x)) > 1e-12) {
      std::ostringstream msg;
      msg << "lagrange_points: " << name << " residual " << ux(x) << " above 1e-12 (bracket ["
          << lo << ", " << hi << "])";
      throw RootSolveError(msg.str());
    }
    return x;
  };

  const double eps = 1e-7;
  std::array<Vec3, 5> pts;
  pts[0] = Vec3(solve_on(-mu + eps, 1.0 - mu - eps, "L1"), 0.0, 0.0);
  pts[1] = Vec3(solve_on(1.0 - mu + eps, 2.0, "L2"), 0.0, 0.0);
  pts[2] = Vec3(solve_on(-2.0, -mu - eps, "L3"), 0.0, 0.0);
  pts[3] = Vec3(0.5 - mu, std::sqrt(3.0) / 2.0, 0.0);
  pts[4] = Vec3(0.5 - mu, -std::sqrt(3.0) / 2.0, 0.0);
  return pts;
}

/// Ballistic propagation of the synodic equations of motion. The sign of
/// `duration` selects forward or backward integration.
inline Trajectory<6> propagate(const Cr3bpSystem& sys, const SynodicState& s0, double duration,
                               const IntegratorSettings& settings = {}) {
  if (duration == 0.0 || !std::isfinite(duration))
    throw std::invalid_argument("propagate: duration must be nonzero and finite");
  auto rhs = [&sys](double, const Vec6& y) { return cr3bp_rhs(sys, y); };
  return integrate_dp54<6>(rhs, s0.as_vec(), s0.t, s0.t + duration, settings);
}

/// State + state-transition-matrix dynamics (42 equations). Layout:
/// y[0..5] state, y[6..41] Phi in column-major order.
inline Eigen::Matrix<double, 42, 1> variational_rhs(const Cr3bpSystem& sys,
                                                    const Eigen::Matrix<double, 42, 1>& y) {
  const SynodicState s = SynodicState::from_vec(y.head<6>(), 0.0);
  Mat6 a = Mat6::Zero();
  a.topRightCorner<3, 3>() = Mat3::Identity();
  a.bottomLeftCorner<3, 3>() = accel_position_jacobian(sys, s.r);
  a.bottomRightCorner<3, 3>() = accel_velocity_jacobian();
  const Eigen::Map<const Mat6> phi(y.data() + 6);
  const Mat6 dphi = a * phi;
  Eigen::Matrix<double, 42, 1> dy;
  dy.head<6>() = cr3bp_rhs(sys, y.head<6>());
  Eigen::Map<Mat6>(dy.data() + 6) = dphi;
  return dy;
}

}  // namespace lrdv
