// Chaser-relative equations of motion in the target LVLH frame: the full
// time-varying plant, the frozen-coefficient prediction model, and an
// independent oracle that differences two absolutely-propagated bodies.
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "lrdv/cr3bp.hpp"
#include "lrdv/lvlh.hpp"
#include "lrdv/math.hpp"
#include "lrdv/orbit.hpp"

namespace lrdv {

struct RelativeState {
  Vec3 rho = Vec3::Zero();      // LVLH position, normalized length
  Vec3 rho_dot = Vec3::Zero();  // LVLH velocity
  double epoch = 0.0;

  Vec6 as_vec() const {
    Vec6 y;
    y << rho, rho_dot;
    return y;
  }
  static RelativeState from_vec(const Vec6& y, double t) {
    return RelativeState{y.head<3>(), y.tail<3>(), t};
  }
};

struct ControlInput {
  Vec3 u = Vec3::Zero();  // LVLH thrust acceleration, normalized
};

// Everything the prediction model holds constant over one horizon, captured
// at a sampling epoch. Positions are expressed in LVLH components.
struct FrozenContext {
  Vec3 omega_il = Vec3::Zero();
  Vec3 r_ot = Vec3::Zero();
  Vec3 r_om = Vec3::Zero();
  Vec3 r_oe = Vec3::Zero();
  double mu = 0.0;
  double epoch = 0.0;
};

inline FrozenContext capture_context(const PeriodicOrbit& orbit, double epoch,
                                     const Cr3bpSystem& sys) {
  const SynodicState target = orbit.at(epoch);
  const auto kin = lvlh_kinematics(target, sys);
  FrozenContext ctx;
  ctx.omega_il = kin.omega_il;
  ctx.r_ot = kin.basis * target.r;
  ctx.r_om = kin.basis * sys.moon_position();
  ctx.r_oe = kin.basis * sys.earth_position();
  ctx.mu = sys.mu;
  ctx.epoch = epoch;
  return ctx;
}

// Test hooks: the equation of motion splits into independent term groups.
struct TermFlags {
  bool rotational = true;
  bool lunar = true;
  bool terrestrial = true;
};

/// Differential gravity term: pull at the target minus pull at the chaser,
/// per unit gravitational parameter. Vanishes at rho = 0.
inline Vec3 gravity_difference(const Vec3& rho, const Vec3& r_ot, const Vec3& r_oi) {
  const Vec3 dt = r_ot - r_oi;
  const Vec3 dc = rho + r_ot - r_oi;
  const double nt = dt.norm(), nc = dc.norm();
  if (nc < 1e-12 || nt < 1e-12)
    throw SingularPositionError("gravity_difference: body at a primary's center");
  return dt / (nt * nt * nt) - dc / (nc * nc * nc);
}

inline Vec3 relative_accel_terms(const Vec3& rho, const Vec3& rho_dot, const Vec3& omega,
                                 const Vec3& omega_dot, const FrozenContext& ctx, const Vec3& u,
                                 const TermFlags& flags = {}) {
  Vec3 a = Vec3::Zero();
  if (flags.rotational) {
    a -= 2.0 * omega.cross(rho_dot);
    a -= omega_dot.cross(rho);
    a -= omega.cross(omega.cross(rho));
  }
  if (flags.lunar) a += ctx.mu * gravity_difference(rho, ctx.r_ot, ctx.r_om);
  if (flags.terrestrial) a += (1.0 - ctx.mu) * gravity_difference(rho, ctx.r_ot, ctx.r_oe);
  return a + u;
}

/// Full time-varying relative acceleration (the plant): frame kinematics
/// and body positions are evaluated at the supplied target state.
inline Vec3 plant_accel(const RelativeState& state, const LvlhKinematics& kin,
                        const SynodicState& target, const ControlInput& u, const Cr3bpSystem& sys,
                        const TermFlags& flags = {}) {
  FrozenContext ctx;
  ctx.omega_il = kin.omega_il;
  ctx.r_ot = kin.basis * target.r;
  ctx.r_om = kin.basis * sys.moon_position();
  ctx.r_oe = kin.basis * sys.earth_position();
  ctx.mu = sys.mu;
  return relative_accel_terms(state.rho, state.rho_dot, kin.omega_il, kin.omega_dot_il, ctx, u.u,
                              flags);
}

/// Prediction-model acceleration: omega frozen, its derivative dropped,
/// body positions frozen at the capture epoch.
inline Vec3 prediction_accel(const RelativeState& state, const FrozenContext& ctx,
                             const ControlInput& u, const TermFlags& flags = {}) {
  return relative_accel_terms(state.rho, state.rho_dot, ctx.omega_il, Vec3::Zero(), ctx, u.u,
                              flags);
}

/// Map an absolute chaser/target state pair into the LVLH relative state.
inline RelativeState relative_from_absolute(const SynodicState& chaser,
                                            const SynodicState& target, const Cr3bpSystem& sys) {
  const Mat3 b = lvlh_basis(target, sys);
  const Vec3 omega_sl = lvlh_omega_synodic(target, sys);
  RelativeState rel;
  rel.rho = b * (chaser.r - target.r);
  rel.rho_dot = b * (chaser.v - target.v) - omega_sl.cross(rel.rho);
  rel.epoch = target.t;
  return rel;
}

/// Inverse of relative_from_absolute.
inline SynodicState absolute_from_relative(const RelativeState& rel, const SynodicState& target,
                                           const Cr3bpSystem& sys) {
  const Mat3 b = lvlh_basis(target, sys);
  const Vec3 omega_sl = lvlh_omega_synodic(target, sys);
  SynodicState chaser;
  chaser.r = target.r + b.transpose() * rel.rho;
  chaser.v = target.v + b.transpose() * (rel.rho_dot + omega_sl.cross(rel.rho));
  chaser.t = target.t;
  return chaser;
}

/// Independent verification path: both bodies obey the absolute synodic
/// equations of motion (the chaser with the control rotated into synodic
/// axes); their difference is mapped into LVLH with the full frame
/// kinematics. Returns d/dt of (rho, rho_dot).
inline Vec6 oracle_relative_accel(const SynodicState& chaser_abs, const SynodicState& target_abs,
                                  const ControlInput& u, const Cr3bpSystem& sys) {
  const Vec3 r = target_abs.r - sys.moon_position();
  const Vec3 at = synodic_accel(sys, target_abs);
  const Vec3 jt = synodic_jerk(sys, target_abs);
  const auto f = detail::lvlh_frame_derivs(r, target_abs.v, at, jt);

  const Vec3 rho_s = chaser_abs.r - target_abs.r;
  const Vec3 rho_dot_s = chaser_abs.v - target_abs.v;
  const Vec3 u_s = f.b.transpose() * u.u;
  const Vec3 rho_ddot_s = synodic_accel(sys, chaser_abs) + u_s - at;

  const Vec3 rho_l = f.b * rho_s;
  const Vec3 rho_dot_l = f.db * rho_s + f.b * rho_dot_s;
  const Vec3 rho_ddot_l = f.ddb * rho_s + 2.0 * f.db * rho_dot_s + f.b * rho_ddot_s;

  Vec6 dy;
  dy << rho_dot_l, rho_ddot_l;
  (void)rho_l;
  return dy;
}

// Piecewise-constant (zero-order-hold) control history.
struct PiecewiseControl {
  std::vector<double> epochs;  // segment start epochs, strictly increasing
  std::vector<Vec3> values;    // one per segment

  static PiecewiseControl constant(const Vec3& u) { return {{}, {u}}; }
  static PiecewiseControl zero() { return constant(Vec3::Zero()); }

  Vec3 at(double t) const {
    if (values.empty()) return Vec3::Zero();
    if (epochs.empty()) return values.front();
    std::size_t i = 0;
    while (i + 1 < epochs.size() && t >= epochs[i + 1]) ++i;
    if (t < epochs.front()) return Vec3::Zero();
    return values[i];
  }
};

enum class RelativeModel { Plant, Prediction };

struct RelativeDynamics {
  RelativeModel model = RelativeModel::Plant;
  const PeriodicOrbit* orbit = nullptr;  // plant only
  const Cr3bpSystem* sys = nullptr;
  FrozenContext ctx;  // prediction only
  TermFlags flags{};

  Vec6 rhs(double t, const Vec6& y, const Vec3& u) const {
    const RelativeState state = RelativeState::from_vec(y, t);
    Vec3 a;
    if (model == RelativeModel::Plant) {
      const SynodicState target = orbit->at(t);
      const auto kin = lvlh_kinematics(target, *sys);
      a = plant_accel(state, kin, target, ControlInput{u}, *sys, flags);
    } else {
      a = prediction_accel(state, ctx, ControlInput{u}, flags);
    }
    Vec6 dy;
    dy << state.rho_dot, a;
    return dy;
  }
};

/// Propagate the relative state under zero-order-hold control. Integration
/// is split at control segment boundaries so the discontinuities never sit
/// inside an integrator step.
inline Trajectory<6> propagate_relative(const RelativeDynamics& dyn, const RelativeState& x0,
                                        const PiecewiseControl& control, double span,
                                        const IntegratorSettings& settings = {}) {
  if (span <= 0.0) throw std::invalid_argument("propagate_relative: span must be > 0");
  const double t0 = x0.epoch;
  const double t1 = t0 + span;

  std::vector<double> cuts{t0};
  for (double e : control.epochs)
    if (e > t0 && e < t1) cuts.push_back(e);
  cuts.push_back(t1);

  Trajectory<6> full;
  Vec6 y = x0.as_vec();
  full.append_node(t0, y);
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double ta = cuts[i], tb = cuts[i + 1];
    const Vec3 u = control.at(0.5 * (ta + tb));
    auto rhs = [&dyn, &u](double t, const Vec6& state) { return dyn.rhs(t, state, u); };
    const auto seg = integrate_dp54<6>(rhs, y, ta, tb, settings);
    for (std::size_t k = 1; k < seg.times().size(); ++k) {
      full.append_node(seg.times()[k], seg.node(k));
      full.append_interval(seg.interval(k - 1));
    }
    y = seg.node(seg.times().size() - 1);
  }
  return full;
}

/// Absolute-propagation oracle for a controlled relative trajectory: the
/// chaser is integrated in synodic coordinates with the LVLH control
/// rotated through the target's instantaneous basis.
inline Trajectory<6> propagate_absolute_chaser(const SynodicState& chaser0,
                                               const PeriodicOrbit& orbit,
                                               const PiecewiseControl& control, double span,
                                               const Cr3bpSystem& sys,
                                               const IntegratorSettings& settings = {}) {
  if (span <= 0.0) throw std::invalid_argument("propagate_absolute_chaser: span must be > 0");
  const double t0 = chaser0.t;
  const double t1 = t0 + span;
  std::vector<double> cuts{t0};
  for (double e : control.epochs)
    if (e > t0 && e < t1) cuts.push_back(e);
  cuts.push_back(t1);

  Trajectory<6> full;
  Vec6 y = chaser0.as_vec();
  full.append_node(t0, y);
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double ta = cuts[i], tb = cuts[i + 1];
    const Vec3 u_l = control.at(0.5 * (ta + tb));
    auto rhs = [&](double t, const Vec6& state) {
      Vec6 dy = cr3bp_rhs(sys, state);
      if (u_l != Vec3::Zero()) {
        const Mat3 b = lvlh_basis(orbit.at(t), sys);
        dy.tail<3>() += b.transpose() * u_l;
      }
      return dy;
    };
    const auto seg = integrate_dp54<6>(rhs, y, ta, tb, settings);
    for (std::size_t k = 1; k < seg.times().size(); ++k) {
      full.append_node(seg.times()[k], seg.node(k));
      full.append_interval(seg.interval(k - 1));
    }
    y = seg.node(seg.times().size() - 1);
  }
  return full;
}

}  // namespace lrdv
