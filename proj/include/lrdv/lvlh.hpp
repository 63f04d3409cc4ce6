// Target-centered LVLH frame and its kinematics. The basis is built from
// the Moon-relative position and synodic-frame velocity of the target; the
// angular velocity is referenced to inertial by adding the synodic frame's
// unit rotation about its z axis.
#pragma once

#include <cmath>
#include <stdexcept>

#include "lrdv/cr3bp.hpp"
#include "lrdv/math.hpp"
#include "lrdv/orbit.hpp"

namespace lrdv {

struct DegenerateGeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Rows of `basis` are the LVLH axes (V-bar, H-bar, R-bar) expressed in
// synodic axes, so basis * v maps synodic components to LVLH components.
// omega_il / omega_dot_il are LVLH components of the frame's angular
// velocity w.r.t. inertial and its time derivative (per normalized time).
struct LvlhKinematics {
  Mat3 basis = Mat3::Identity();
  Vec3 omega_il = Vec3::Zero();
  Vec3 omega_dot_il = Vec3::Zero();
  double epoch = 0.0;
};

namespace detail {

// First and second time derivatives of w/|w| given w and its derivatives.
struct UnitDerivs {
  Vec3 u, du, ddu;
};

inline UnitDerivs unit_derivs(const Vec3& w, const Vec3& dw, const Vec3& ddw) {
  const double n = w.norm();
  const Vec3 u = w / n;
  const double dn = u.dot(dw);
  const double ddn = (dw.squaredNorm() + w.dot(ddw) - dn * dn) / n;
  const Vec3 du = dw / n - w * (dn / (n * n));
  const Vec3 ddu = ddw / n - 2.0 * dw * (dn / (n * n)) - w * (ddn / (n * n)) +
                   2.0 * w * (dn * dn / (n * n * n));
  return {u, du, ddu};
}

struct FrameDerivs {
  Mat3 b, db, ddb;
};

// Basis rows and their derivatives from the Moon-relative position r and
// its first three time derivatives in the synodic frame.
inline FrameDerivs lvlh_frame_derivs(const Vec3& r, const Vec3& v, const Vec3& a, const Vec3& j) {
  if (r.norm() < 1e-12) throw DegenerateGeometryError("lvlh frame: target at the Moon's center");
  const Vec3 h = r.cross(v);
  if (h.norm() < 1e-12)
    throw DegenerateGeometryError("lvlh frame: rectilinear Moon-relative motion");
  const Vec3 dh = r.cross(a);
  const Vec3 ddh = v.cross(a) + r.cross(j);

  const UnitDerivs kk = unit_derivs(r, v, a);      // k = -unit(r)
  const UnitDerivs jj = unit_derivs(h, dh, ddh);   // j = -unit(h)
  FrameDerivs f;
  const Vec3 khat = -kk.u, jhat = -jj.u;
  const Vec3 dkhat = -kk.du, djhat = -jj.du;
  const Vec3 ddkhat = -kk.ddu, ddjhat = -jj.ddu;
  f.b.row(0) = jhat.cross(khat);
  f.b.row(1) = jhat;
  f.b.row(2) = khat;
  f.db.row(0) = djhat.cross(khat) + jhat.cross(dkhat);
  f.db.row(1) = djhat;
  f.db.row(2) = dkhat;
  f.ddb.row(0) = ddjhat.cross(khat) + 2.0 * djhat.cross(dkhat) + jhat.cross(ddkhat);
  f.ddb.row(1) = ddjhat;
  f.ddb.row(2) = ddkhat;
  return f;
}

}  // namespace detail

/// LVLH basis at a target state; rows are i-hat, j-hat, k-hat in synodic
/// axes. j-hat is anti-parallel to the Moon-relative angular momentum and
/// k-hat points from the target toward the Moon.
inline Mat3 lvlh_basis(const SynodicState& target, const Cr3bpSystem& sys) {
  const Vec3 r = target.r - sys.moon_position();
  const Vec3 h = r.cross(target.v);
  if (r.norm() < 1e-12) throw DegenerateGeometryError("lvlh_basis: target at the Moon's center");
  if (h.norm() < 1e-12)
    throw DegenerateGeometryError("lvlh_basis: rectilinear Moon-relative motion");
  Mat3 b;
  b.row(2) = (-r / r.norm()).transpose();
  b.row(1) = (-h / h.norm()).transpose();
  b.row(0) = b.row(1).cross(b.row(2));
  return b;
}

/// Full frame kinematics at a ballistic target state. The Moon-relative
/// acceleration and jerk follow from the synodic equations of motion, so no
/// trajectory context is needed.
inline LvlhKinematics lvlh_kinematics(const SynodicState& target, const Cr3bpSystem& sys) {
  const Vec3 r = target.r - sys.moon_position();
  const Vec3 a = synodic_accel(sys, target);
  const Vec3 j = synodic_jerk(sys, target);
  const auto f = detail::lvlh_frame_derivs(r, target.v, a, j);

  // dB/dt = -[omega_sl] B with omega_sl in LVLH components.
  const Vec3 omega_sl = vee(-(f.db * f.b.transpose()));
  const Vec3 omega_sl_dot = vee(-(f.ddb * f.b.transpose() + f.db * f.db.transpose()));
  const Vec3 z_syn(0.0, 0.0, 1.0);  // synodic rotation rate is 1 (normalized)

  LvlhKinematics kin;
  kin.basis = f.b;
  kin.omega_il = omega_sl + f.b * z_syn;
  kin.omega_dot_il = omega_sl_dot + f.db * z_syn;
  kin.epoch = target.t;
  return kin;
}

inline LvlhKinematics lvlh_kinematics(const PeriodicOrbit& orbit, double epoch,
                                      const Cr3bpSystem& sys) {
  LvlhKinematics kin = lvlh_kinematics(orbit.at(epoch), sys);
  kin.epoch = epoch;
  return kin;
}

/// Angular velocity of LVLH w.r.t. the synodic frame, LVLH components.
inline Vec3 lvlh_omega_synodic(const SynodicState& target, const Cr3bpSystem& sys) {
  const LvlhKinematics kin = lvlh_kinematics(target, sys);
  return kin.omega_il - kin.basis * Vec3(0.0, 0.0, 1.0);
}

}  // namespace lrdv
