// Periodic target orbits: single-shooting differential correction for halo
// orbits, trajectory-file ingestion, and apolune/perilune event detection.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrdv/cr3bp.hpp"

namespace lrdv {

struct CorrectionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OrbitFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PeriodicOrbit {
  SynodicState initial_state;  // on the x-z plane (y = 0), epoch 0
  double period = 0.0;
  Trajectory<6> traj;  // dense over [0, period]
  std::vector<std::string> warnings;

  SynodicState at(double epoch) const {
    double tau = std::fmod(epoch, period);
    if (tau < 0.0) tau += period;
    return SynodicState::from_vec(traj.eval(tau), epoch);
  }
};

struct OrbitEvent {
  enum class Kind { Apolune, Perilune };
  Kind kind;
  double epoch;          // normalized time in [0, period)
  double moon_distance;  // normalized length
};

struct CorrectionSettings {
  double tol = 1e-10;        // on |vx|, |vz| at the half-period crossing
  int max_iter = 30;
  bool fix_z0 = true;        // adjust (x0, vy0); otherwise adjust (z0, vy0)
  double sensitivity_warn = 1e12;
  IntegratorSettings integrator{};
};

namespace detail {

struct HalfCrossing {
  double t;        // crossing epoch
  Vec6 state;      // state at the crossing
  Mat6 stm;        // state transition matrix at the crossing
};

// Propagate the variational system from a y=0 state until the next y=0
// crossing and refine the crossing epoch on the dense output.
inline HalfCrossing next_plane_crossing(const Cr3bpSystem& sys, const Vec6& y0,
                                        const IntegratorSettings& settings) {
  using Vec42 = Eigen::Matrix<double, 42, 1>;
  Vec42 z0 = Vec42::Zero();
  z0.head<6>() = y0;
  Eigen::Map<Mat6>(z0.data() + 6) = Mat6::Identity();
  auto rhs = [&sys](double, const Vec42& z) { return variational_rhs(sys, z); };

  const double chunk = 0.4;
  double t0 = 0.0;
  Vec42 z = z0;
  for (int seg = 0; seg < 20; ++seg) {
    const auto traj = integrate_dp54<42>(rhs, z, t0, t0 + chunk, settings);
    const auto& ts = traj.times();
    for (std::size_t i = 1; i < ts.size(); ++i) {
      const double ya = traj.node(i - 1)[1];
      const double yb = traj.node(i)[1];
      const bool skip_start = (t0 == 0.0 && ts[i - 1] == 0.0);
      if (!skip_start && ya == 0.0) {
        return HalfCrossing{ts[i - 1], traj.node(i - 1).head<6>(),
                            Eigen::Map<const Mat6>(traj.node(i - 1).data() + 6)};
      }
      if (ya * yb < 0.0) {
        double lo = ts[i - 1], hi = ts[i];
        double tm = 0.5 * (lo + hi);
        for (int it = 0; it < 100; ++it) {
          const Vec42 zm = traj.eval(tm);
          const double ym = zm[1];
          const double vym = zm[4];
          double step = (vym != 0.0) ? ym / vym : 0.0;
          double tn = tm - step;
          if (step == 0.0 || tn <= lo || tn >= hi) {  // fall back to bisection
            if (ya * ym <= 0.0)
              hi = tm;
            else
              lo = tm;
            tn = 0.5 * (lo + hi);
          }
          if (std::abs(tn - tm) < 1e-14 * std::max(1.0, std::abs(tm))) {
            tm = tn;
            break;
          }
          tm = tn;
        }
        const Vec42 zc = traj.eval(tm);
        return HalfCrossing{tm, zc.head<6>(), Eigen::Map<const Mat6>(zc.data() + 6)};
      }
    }
    t0 += chunk;
    z = traj.eval(t0);
  }
  throw CorrectionError("next_plane_crossing: no y=0 crossing found within 8 time units");
}

}  // namespace detail

/// Differential correction of a perpendicular x-z plane crossing into a
/// periodic halo-class orbit. The seed must satisfy y=0 and vx ~ vz ~ 0;
/// those components are projected to zero exactly before iterating.
inline PeriodicOrbit correct_halo(const Cr3bpSystem& sys, const SynodicState& seed,
                                  const CorrectionSettings& settings = {}) {
  if (std::abs(seed.r.y()) > 1e-6 || std::abs(seed.v.x()) > 1e-3 || std::abs(seed.v.z()) > 1e-3)
    throw std::invalid_argument("correct_halo: seed is not a perpendicular x-z plane crossing");

  double x0 = seed.r.x(), z0 = seed.r.z(), vy0 = seed.v.y();
  std::vector<std::string> warnings;
  double half_t = 0.0;
  bool converged = false;

  for (int iter = 0; iter < settings.max_iter; ++iter) {
    Vec6 y0;
    y0 << x0, 0.0, z0, 0.0, vy0, 0.0;
    const auto cross = detail::next_plane_crossing(sys, y0, settings.integrator);
    half_t = cross.t;
    const double vx_h = cross.state[3];
    const double vz_h = cross.state[5];
    if (std::max(std::abs(vx_h), std::abs(vz_h)) < settings.tol) {
      converged = true;
      if (cross.stm.cwiseAbs().maxCoeff() > settings.sensitivity_warn) {
        warnings.push_back("correct_halo: state-transition sensitivity exceeds 1e12; "
                           "the corrected orbit may be poorly conditioned");
      }
      break;
    }

    const Vec6 f = cr3bp_rhs(sys, cross.state);
    const double vy_h = cross.state[4];
    if (std::abs(vy_h) < 1e-13)
      throw CorrectionError("correct_halo: tangential plane crossing, cannot eliminate time");
    const int col_a = settings.fix_z0 ? 0 : 2;  // x0 or z0
    const int col_b = 4;                        // vy0
    Eigen::Matrix2d jac;
    Eigen::Vector2d res(vx_h, vz_h);
    for (int c = 0; c < 2; ++c) {
      const int col = (c == 0) ? col_a : col_b;
      jac(0, c) = cross.stm(3, col) - f[3] / vy_h * cross.stm(1, col);
      jac(1, c) = cross.stm(5, col) - f[5] / vy_h * cross.stm(1, col);
    }
    Eigen::Vector2d delta = jac.fullPivLu().solve(res);
    const double cap = 0.02;
    const double mag = delta.cwiseAbs().maxCoeff();
    if (mag > cap) delta *= cap / mag;
    if (settings.fix_z0)
      x0 -= delta[0];
    else
      z0 -= delta[0];
    vy0 -= delta[1];
  }
  if (!converged)
    throw CorrectionError("correct_halo: Newton iteration did not reach tolerance " +
                          std::to_string(settings.tol));

  PeriodicOrbit orbit;
  orbit.initial_state = SynodicState{Vec3(x0, 0.0, z0), Vec3(0.0, vy0, 0.0), 0.0};
  orbit.period = 2.0 * half_t;
  auto rhs = [&sys](double, const Vec6& y) { return cr3bp_rhs(sys, y); };
  orbit.traj = integrate_dp54<6>(rhs, orbit.initial_state.as_vec(), 0.0, orbit.period,
                                 settings.integrator);
  orbit.warnings = std::move(warnings);
  const double closure =
      (orbit.traj.eval(orbit.period) - orbit.initial_state.as_vec()).cwiseAbs().maxCoeff();
  if (closure > 1e-8)
    orbit.warnings.push_back("correct_halo: endpoint mismatch " + std::to_string(closure));
  return orbit;
}

inline void save_orbit(const PeriodicOrbit& orbit, const Cr3bpSystem& sys, const std::string& path,
                       int samples = 2000) {
  std::ofstream out(path);
  if (!out) throw OrbitFileError("save_orbit: cannot open " + path);
  char buf[512];
  out << "# units: normalized\n";
  std::snprintf(buf, sizeof(buf), "# mu: %.17g\n# period: %.17g\n", sys.mu, orbit.period);
  out << buf;
  for (int i = 0; i <= samples; ++i) {
    const double t = orbit.period * i / samples;
    const Vec6 y = orbit.traj.eval(std::min(t, orbit.period));
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", t, y[0], y[1],
                  y[2], y[3], y[4], y[5]);
    out << buf;
  }
}

/// Read a trajectory file (see save_orbit for the format) and rebuild a
/// dense orbit through its samples. Periodicity is checked, not enforced.
inline PeriodicOrbit load_orbit(const std::string& path, const Cr3bpSystem& sys) {
  std::ifstream in(path);
  if (!in) throw OrbitFileError("load_orbit: cannot open " + path);

  std::string units = "normalized";
  std::optional<double> mu_header, period_header;
  std::vector<double> ts;
  std::vector<Vec6> ys;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key;
      hs >> key;
      if (key == "units:")
        hs >> units;
      else if (key == "mu:") {
        double v;
        hs >> v;
        mu_header = v;
      } else if (key == "period:") {
        double v;
        hs >> v;
        period_header = v;
      }
      continue;
    }
    std::istringstream row(line);
    double t;
    Vec6 y;
    if (!(row >> t >> y[0] >> y[1] >> y[2] >> y[3] >> y[4] >> y[5]))
      throw OrbitFileError("load_orbit: parse error at line " + std::to_string(line_no));
    if (!ts.empty() && t <= ts.back())
      throw OrbitFileError("load_orbit: non-monotone epoch at line " + std::to_string(line_no) +
                           " (t=" + std::to_string(t) + ")");
    ts.push_back(t);
    ys.push_back(y);
  }
  if (ts.size() < 2) throw OrbitFileError("load_orbit: fewer than two samples");

  if (units == "si") {
    for (std::size_t i = 0; i < ts.size(); ++i) {
      ts[i] = from_si(sys, ts[i], Quantity::Time);
      ys[i].head<3>() /= sys.length_unit;
      ys[i].tail<3>() /= sys.velocity_unit();
    }
    if (period_header) period_header = from_si(sys, *period_header, Quantity::Time);
  } else if (units != "normalized") {
    throw OrbitFileError("load_orbit: unknown units '" + units + "'");
  }
  if (mu_header && std::abs(*mu_header - sys.mu) > 1e-12)
    throw OrbitFileError("load_orbit: file mu " + std::to_string(*mu_header) +
                         " disagrees with system mu " + std::to_string(sys.mu));

  PeriodicOrbit orbit;
  std::vector<Vec6> fs(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) fs[i] = cr3bp_rhs(sys, ys[i]);
  orbit.traj = hermite_trajectory<6>(ts, ys, fs);
  orbit.initial_state = SynodicState::from_vec(ys.front(), ts.front());
  orbit.period = period_header ? *period_header : (ts.back() - ts.front());
  const double closure = (orbit.traj.eval(std::min(orbit.period, ts.back())) - ys.front())
                             .cwiseAbs()
                             .maxCoeff();
  if (closure > 1e-8)
    orbit.warnings.push_back("load_orbit: trajectory is not periodic to 1e-8 (mismatch " +
                             std::to_string(closure) + ")");
  return orbit;
}

/// All interior extrema of the Moon distance over one period, refined to
/// 1e-10 in time and sorted by epoch.
inline std::vector<OrbitEvent> find_extreme_points(const PeriodicOrbit& orbit,
                                                   const Cr3bpSystem& sys) {
  const Vec3 moon = sys.moon_position();
  auto dist_rate = [&](double t) {
    double tau = std::fmod(t, orbit.period);
    if (tau < 0.0) tau += orbit.period;
    const Vec6 y = orbit.traj.eval(tau);
    const Vec3 d = y.head<3>() - moon;
    return d.dot(y.tail<3>()) / d.norm();
  };
  // Sample at cell midpoints so extrema sitting exactly on the periodic
  // boundary still produce a bracketed sign change; the last cell wraps.
  const int n = 4096;
  std::vector<OrbitEvent> events;
  for (int i = 0; i < n; ++i) {
    const double ta = orbit.period * (i + 0.5) / n;
    const double tb = orbit.period * (i + 1.5) / n;
    const double ga = dist_rate(ta);
    const double gb = dist_rate(tb);
    if (ga == 0.0 || ga * gb > 0.0) continue;
    double lo = ta, hi = tb, glo = ga;
    while (hi - lo > 1e-12) {
      const double mid = 0.5 * (lo + hi);
      const double gm = dist_rate(mid);
      if (glo * gm <= 0.0)
        hi = mid;
      else {
        lo = mid;
        glo = gm;
      }
    }
    const double t = 0.5 * (lo + hi);
    double epoch = std::fmod(t, orbit.period);
    if (epoch < 0.0) epoch += orbit.period;
    const Vec6 y = orbit.traj.eval(epoch);
    const double dist = (y.head<3>() - moon).norm();
    const auto kind = (ga > 0.0) ? OrbitEvent::Kind::Apolune : OrbitEvent::Kind::Perilune;
    events.push_back(OrbitEvent{kind, epoch, dist});
  }
  std::sort(events.begin(), events.end(),
            [](const OrbitEvent& a, const OrbitEvent& b) { return a.epoch < b.epoch; });
  return events;
}

/// Epoch `offset_hours` before the apolune passage, wrapped into [0, period).
inline double rendezvous_epoch(const PeriodicOrbit& orbit, double offset_hours,
                               const Cr3bpSystem& sys) {
  if (offset_hours < 0.0) throw std::invalid_argument("rendezvous_epoch: offset must be >= 0");
  const auto events = find_extreme_points(orbit, sys);
  const OrbitEvent* apolune = nullptr;
  for (const auto& e : events) {
    if (e.kind != OrbitEvent::Kind::Apolune) continue;
    if (!apolune || e.moon_distance > apolune->moon_distance) apolune = &e;
  }
  if (!apolune) throw std::runtime_error("rendezvous_epoch: orbit has no apolune event");
  const double offset = offset_hours * 3600.0 / sys.time_unit;
  double epoch = std::fmod(apolune->epoch - offset, orbit.period);
  if (epoch < 0.0) epoch += orbit.period;
  return epoch;
}

/// Default L2 southern NRHO seed (9:2-resonance class, apolune crossing;
/// period 6.56 days, perilune 3227 km, apolune 71174 km). The exact member
/// of the family is a documented stand-in; see README.
inline SynodicState default_nrho_seed() {
  return SynodicState{Vec3(1.0218855679551844, 0.0, -0.182),
                      Vec3(0.0, -0.10295813868516568, 0.0), 0.0};
}

}  // namespace lrdv
