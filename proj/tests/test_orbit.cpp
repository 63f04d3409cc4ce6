#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lrdv/orbit.hpp"

using namespace lrdv;

namespace {

const Cr3bpSystem& earth_moon() {
  static const Cr3bpSystem sys = Cr3bpSystem::earth_moon();
  return sys;
}

const PeriodicOrbit& nrho() {
  static const PeriodicOrbit orbit = correct_halo(earth_moon(), default_nrho_seed());
  return orbit;
}

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("corrected orbit closes on itself", "[orbit]") {
  const auto& orbit = nrho();
  const Vec6 start = orbit.initial_state.as_vec();
  const Vec6 end = orbit.traj.eval(orbit.period);
  CHECK((end - start).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(orbit.initial_state.r.y() == 0.0);
}

TEST_CASE("correction of a converged orbit is a fixed point", "[orbit]") {
  const auto& orbit = nrho();
  const auto again = correct_halo(earth_moon(), orbit.initial_state);
  CHECK(std::abs(again.initial_state.r.x() - orbit.initial_state.r.x()) < 1e-10);
  CHECK(std::abs(again.initial_state.r.z() - orbit.initial_state.r.z()) < 1e-10);
  CHECK(std::abs(again.initial_state.v.y() - orbit.initial_state.v.y()) < 1e-10);
}

TEST_CASE("orbit respects the CR3BP mirror symmetry", "[orbit]") {
  // A trajectory mirrored in y and reversed in time is again a trajectory;
  // for a periodic orbit started at a perpendicular crossing they coincide.
  const auto& orbit = nrho();
  for (double f : {0.1, 0.3, 0.45}) {
    const double t = f * orbit.period;
    const Vec6 fwd = orbit.traj.eval(t);
    const Vec6 back = orbit.traj.eval(orbit.period - t);
    CHECK(std::abs(fwd[0] - back[0]) < 1e-7);
    CHECK(std::abs(fwd[1] + back[1]) < 1e-7);
    CHECK(std::abs(fwd[2] - back[2]) < 1e-7);
    CHECK(std::abs(fwd[3] + back[3]) < 1e-7);
    CHECK(std::abs(fwd[4] - back[4]) < 1e-7);
    CHECK(std::abs(fwd[5] + back[5]) < 1e-7);
  }
}

TEST_CASE("Jacobi integral is conserved along the stored orbit", "[orbit]") {
  const auto& sys = earth_moon();
  const auto& orbit = nrho();
  const double c0 = jacobi_integral(sys, orbit.initial_state);
  double worst = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double t = orbit.period * i / 1000.0;
    const double c = jacobi_integral(sys, SynodicState::from_vec(orbit.traj.eval(t), t));
    worst = std::max(worst, std::abs(c - c0) / std::abs(c0));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("interpolation reproduces stored nodes exactly", "[orbit]") {
  const auto& orbit = nrho();
  const auto& ts = orbit.traj.times();
  for (std::size_t i = 0; i < ts.size(); i += 97) {
    CHECK((orbit.traj.eval(ts[i]) - orbit.traj.node(i)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("an NRHO has exactly one apolune and one perilune", "[orbit]") {
  const auto& sys = earth_moon();
  const auto& orbit = nrho();
  const auto events = find_extreme_points(orbit, sys);
  REQUIRE(events.size() == 2);

  // Dense-sampling oracle: extrema counted on a 1e4-point grid.
  const Vec3 moon = sys.moon_position();
  int maxima = 0, minima = 0;
  const int n = 10000;
  auto dist = [&](int i) {
    const double t = orbit.period * ((i % n + n) % n) / n;
    return (orbit.traj.eval(t).head<3>() - moon).norm();
  };
  for (int i = 0; i < n; ++i) {
    const double a = dist(i - 1), b = dist(i), c = dist(i + 1);
    if (b > a && b > c) ++maxima;
    if (b < a && b < c) ++minima;
  }
  CHECK(maxima == 1);
  CHECK(minima == 1);

  int apolunes = 0, perilunes = 0;
  double apo_dist = 0.0, peri_dist = 0.0;
  for (const auto& e : events) {
    CHECK(e.epoch >= 0.0);
    CHECK(e.epoch < orbit.period);
    // Derivative of the Moon distance vanishes at each reported epoch.
    const Vec6 y = orbit.traj.eval(e.epoch);
    const Vec3 d = y.head<3>() - moon;
    CHECK(std::abs(d.dot(y.tail<3>()) / d.norm()) < 1e-8);
    if (e.kind == OrbitEvent::Kind::Apolune) {
      ++apolunes;
      apo_dist = e.moon_distance;
    } else {
      ++perilunes;
      peri_dist = e.moon_distance;
    }
  }
  CHECK(apolunes == 1);
  CHECK(perilunes == 1);
  CHECK(apo_dist > peri_dist);

  // Alternation and ordering.
  for (std::size_t i = 1; i < events.size(); ++i) {
    CHECK(events[i].epoch > events[i - 1].epoch);
    CHECK(events[i].kind != events[i - 1].kind);
  }
}

TEST_CASE("rendezvous epoch offsets from apolune", "[orbit]") {
  const auto& sys = earth_moon();
  const auto& orbit = nrho();
  const auto events = find_extreme_points(orbit, sys);
  double apolune = -1.0;
  for (const auto& e : events)
    if (e.kind == OrbitEvent::Kind::Apolune) apolune = e.epoch;
  REQUIRE(apolune >= 0.0);

  CHECK(rendezvous_epoch(orbit, 0.0, sys) == Catch::Approx(apolune).margin(1e-12));

  const double six_hours = 6.0 * 3600.0 / sys.time_unit;
  double expected = std::fmod(apolune - six_hours, orbit.period);
  if (expected < 0.0) expected += orbit.period;
  CHECK(rendezvous_epoch(orbit, 6.0, sys) == Catch::Approx(expected).margin(1e-12));

  const double hours_per_period = orbit.period * sys.time_unit / 3600.0;
  CHECK(rendezvous_epoch(orbit, 2.0 + hours_per_period, sys) ==
        Catch::Approx(rendezvous_epoch(orbit, 2.0, sys)).margin(1e-9));
}

TEST_CASE("orbit files round-trip", "[orbit]") {
  const auto& sys = earth_moon();
  const auto& orbit = nrho();
  const auto path = temp_file("lrdv_roundtrip.orb");
  save_orbit(orbit, sys, path.string(), 4000);
  const auto loaded = load_orbit(path.string(), sys);
  CHECK(loaded.period == Catch::Approx(orbit.period).epsilon(1e-15));
  double worst = 0.0;
  for (int i = 0; i <= 4000; ++i) {
    const double t = orbit.period * i / 4000.0;
    worst = std::max(worst, (loaded.traj.eval(t) - orbit.traj.eval(t)).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-12);
  std::filesystem::remove(path);
}

TEST_CASE("non-monotone epochs are rejected with the offending row", "[orbit]") {
  const auto& sys = earth_moon();
  const auto path = temp_file("lrdv_bad.orb");
  {
    std::ofstream out(path);
    out << "# units: normalized\n# mu: 0.01215\n# period: 1.0\n";
    out << "0.0 1 0 0 0 0.1 0\n";
    out << "0.2 1 0.1 0 0 0.1 0\n";
    out << "0.1 1 0.2 0 0 0.1 0\n";
  }
  CHECK_THROWS_WITH(load_orbit(path.string(), sys), Catch::Matchers::ContainsSubstring("line 6"));
  std::filesystem::remove(path);
}

TEST_CASE("mu mismatch between file and system is rejected", "[orbit]") {
  const auto& sys = earth_moon();
  const auto path = temp_file("lrdv_mu.orb");
  {
    std::ofstream out(path);
    out << "# units: normalized\n# mu: 0.02\n# period: 1.0\n";
    out << "0.0 1 0 0 0 0.1 0\n0.5 1 0.05 0 0 0.1 0\n";
  }
  CHECK_THROWS_AS(load_orbit(path.string(), sys), OrbitFileError);
  std::filesystem::remove(path);
}

TEST_CASE("a sampled analytic circular orbit interpolates cleanly", "[orbit]") {
  // In a vanishing-mu system, a circular Kepler orbit about the heavy
  // primary expressed in the rotating frame is an exact solution.
  const Cr3bpSystem sys(1e-12, 384400.0, 2360591.424);
  const double radius = 0.9;
  const double n_inertial = std::pow(radius, -1.5);
  const double n_syn = n_inertial - 1.0;
  auto state_at = [&](double t) {
    Vec6 y;
    const double a = n_syn * t;
    y << radius * std::cos(a), radius * std::sin(a), 0.0, -radius * n_syn * std::sin(a),
        radius * n_syn * std::cos(a), 0.0;
    return y;
  };
  const auto path = temp_file("lrdv_circle.orb");
  {
    std::ofstream out(path);
    const double period = 2.0 * std::numbers::pi / std::abs(n_syn);
    out << "# units: normalized\n# mu: 1e-12\n# period: " << period << "\n";
    char buf[256];
    const int samples = 3000;
    for (int i = 0; i <= samples; ++i) {
      const double t = period * i / samples;
      const Vec6 y = state_at(t);
      std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", t, y[0], y[1],
                    y[2], y[3], y[4], y[5]);
      out << buf;
    }
  }
  const auto loaded = load_orbit(path.string(), sys);
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    const double t = loaded.period * (i + 0.37) / 500.0;
    worst = std::max(worst, (loaded.traj.eval(t) - state_at(t)).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-6);
  std::filesystem::remove(path);
}

TEST_CASE("si unit files convert on load", "[orbit]") {
  const auto& sys = earth_moon();
  const auto path = temp_file("lrdv_si.orb");
  const Vec6 y_norm = nrho().initial_state.as_vec();
  {
    std::ofstream out(path);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "# units: si\n# mu: 0.01215\n# period: %.17g\n",
                  nrho().period * sys.time_unit);
    out << buf;
    for (int i = 0; i < 3; ++i) {
      const double t = 100.0 * i;  // seconds
      const Vec6 y = nrho().traj.eval(t / sys.time_unit);
      std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", t,
                    y[0] * sys.length_unit, y[1] * sys.length_unit, y[2] * sys.length_unit,
                    y[3] * sys.velocity_unit(), y[4] * sys.velocity_unit(),
                    y[5] * sys.velocity_unit());
      out << buf;
    }
  }
  const auto loaded = load_orbit(path.string(), sys);
  CHECK((loaded.initial_state.as_vec() - y_norm).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(loaded.period == Catch::Approx(nrho().period).epsilon(1e-12));
  std::filesystem::remove(path);
}

TEST_CASE("bad seeds are rejected", "[orbit]") {
  const auto& sys = earth_moon();
  SynodicState seed = default_nrho_seed();
  seed.r.y() = 0.1;
  CHECK_THROWS_AS(correct_halo(sys, seed), std::invalid_argument);
}
