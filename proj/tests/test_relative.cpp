#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "lrdv/relative.hpp"

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

double rdv_start() {
  static const double epoch = rendezvous_epoch(nrho(), 6.0, earth_moon());
  return epoch;
}

// Random LVLH state with |rho| <= radius_km, seeded for reproducibility.
RelativeState random_state(std::mt19937& rng, double epoch, double radius_km) {
  const auto& sys = earth_moon();
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  RelativeState x;
  x.rho = Vec3(unit(rng), unit(rng), unit(rng)) * (radius_km / sys.length_unit);
  x.rho_dot = Vec3(unit(rng), unit(rng), unit(rng)) * (0.01 / sys.velocity_unit());  // ~10 m/s
  x.epoch = epoch;
  return x;
}

}  // namespace

TEST_CASE("relative acceleration vanishes at the origin", "[relative]") {
  const auto& sys = earth_moon();
  const double epoch = rdv_start();
  const SynodicState target = nrho().at(epoch);
  const auto kin = lvlh_kinematics(target, sys);
  const RelativeState x{Vec3::Zero(), Vec3::Zero(), epoch};
  CHECK(plant_accel(x, kin, target, ControlInput{}, sys).norm() == 0.0);
  const auto ctx = capture_context(nrho(), epoch, sys);
  CHECK(prediction_accel(x, ctx, ControlInput{}).norm() == 0.0);
}

TEST_CASE("dynamics are affine in the input", "[relative]") {
  const auto& sys = earth_moon();
  const double epoch = rdv_start();
  const SynodicState target = nrho().at(epoch);
  const auto kin = lvlh_kinematics(target, sys);
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const RelativeState x = random_state(rng, epoch, 10.0);
    const Vec3 u(unit(rng), unit(rng), unit(rng));
    const Vec3 with_u = plant_accel(x, kin, target, ControlInput{u}, sys);
    const Vec3 without = plant_accel(x, kin, target, ControlInput{}, sys);
    CHECK((with_u - without - u).norm() < 1e-12 * std::max(1.0, u.norm()));
  }
}

TEST_CASE("prediction model differs from the plant by the omega_dot term", "[relative]") {
  const auto& sys = earth_moon();
  const double epoch = rdv_start();
  const SynodicState target = nrho().at(epoch);
  const auto kin = lvlh_kinematics(target, sys);
  const auto ctx = capture_context(nrho(), epoch, sys);
  std::mt19937 rng(6);
  for (int i = 0; i < 20; ++i) {
    const RelativeState x = random_state(rng, epoch, 10.0);
    const Vec3 plant = plant_accel(x, kin, target, ControlInput{}, sys);
    const Vec3 pred = prediction_accel(x, ctx, ControlInput{});
    const Vec3 expected_gap = -kin.omega_dot_il.cross(x.rho);
    CHECK((plant - pred - expected_gap).norm() < 1e-14 * std::max(1.0, plant.norm()));
  }
}

TEST_CASE("plant acceleration matches the absolute-propagation oracle", "[relative]") {
  const auto& sys = earth_moon();
  const double epoch = rdv_start();
  const SynodicState target = nrho().at(epoch);
  const auto kin = lvlh_kinematics(target, sys);
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const RelativeState x = random_state(rng, epoch, 10.0);
    const Vec3 u = Vec3(unit(rng), unit(rng), unit(rng)) * 7.0;  // ~0.02 m/s^2 scale
    const SynodicState chaser = absolute_from_relative(x, target, sys);
    const Vec6 oracle = oracle_relative_accel(chaser, target, ControlInput{u}, sys);
    const Vec3 plant = plant_accel(x, kin, target, ControlInput{u}, sys);
    worst = std::max(worst, (oracle.head<3>() - x.rho_dot).norm());
    worst = std::max(worst, (oracle.tail<3>() - plant).norm());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("oracle is zero when the chaser sits on the target", "[relative]") {
  const auto& sys = earth_moon();
  const SynodicState target = nrho().at(rdv_start());
  CHECK(oracle_relative_accel(target, target, ControlInput{}, sys).norm() == 0.0);
}

TEST_CASE("LVLH round trip of states and controls is the identity", "[relative]") {
  const auto& sys = earth_moon();
  const double epoch = rdv_start();
  const SynodicState target = nrho().at(epoch);
  const Mat3 b = lvlh_basis(target, sys);
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    const Vec3 u(unit(rng), unit(rng), unit(rng));
    CHECK((b * (b.transpose() * u) - u).norm() < 1e-14);
    const RelativeState x = random_state(rng, epoch, 10.0);
    const SynodicState abs = absolute_from_relative(x, target, sys);
    const RelativeState back = relative_from_absolute(abs, target, sys);
    CHECK((back.rho - x.rho).norm() < 1e-14 * std::max(1.0, x.rho.norm()));
    CHECK((back.rho_dot - x.rho_dot).norm() < 1e-14 * std::max(1.0, x.rho_dot.norm()));
  }
}

TEST_CASE("gravity difference terms are continuous near the origin", "[relative]") {
  const auto& sys = earth_moon();
  const auto ctx = capture_context(nrho(), rdv_start(), sys);
  const double ball = 10.0 / sys.length_unit;
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const Vec3 rho = Vec3(unit(rng), unit(rng), unit(rng)) * ball;
    const Vec3 rho2 = rho + Vec3(unit(rng), unit(rng), unit(rng)) * (1e-3 * ball);
    const Vec3 g1 = gravity_difference(rho, ctx.r_ot, ctx.r_om);
    const Vec3 g2 = gravity_difference(rho2, ctx.r_ot, ctx.r_om);
    CHECK((g1 - g2).norm() < 1e3 * (rho - rho2).norm());
  }
  CHECK(gravity_difference(Vec3::Zero(), ctx.r_ot, ctx.r_om).norm() == 0.0);
}

TEST_CASE("zero state under zero control stays identically zero", "[relative]") {
  const auto& sys = earth_moon();
  RelativeDynamics dyn;
  dyn.model = RelativeModel::Plant;
  dyn.orbit = &nrho();
  dyn.sys = &sys;
  const RelativeState x0{Vec3::Zero(), Vec3::Zero(), rdv_start()};
  const auto traj = propagate_relative(dyn, x0, PiecewiseControl::zero(), 600.0 / sys.time_unit);
  CHECK(traj.eval(traj.end_time()).norm() == 0.0);
}

TEST_CASE("with dynamics terms disabled the model is a double integrator", "[relative]") {
  const auto& sys = earth_moon();
  RelativeDynamics dyn;
  dyn.model = RelativeModel::Prediction;
  dyn.ctx = capture_context(nrho(), rdv_start(), sys);
  dyn.flags = TermFlags{false, false, false};
  const Vec3 u(0.5, -0.25, 1.0);
  const double tau = 3e-4;
  const RelativeState x0{Vec3::Zero(), Vec3::Zero(), 0.0};
  const auto traj = propagate_relative(dyn, x0, PiecewiseControl::constant(u), tau);
  const Vec6 y = traj.eval(tau);
  CHECK((y.head<3>() - 0.5 * u * tau * tau).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((y.tail<3>() - u * tau).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("plant propagation tracks the absolute oracle over one hour", "[relative]") {
  const auto& sys = earth_moon();
  const double epoch = rdv_start();
  const double hour = 3600.0 / sys.time_unit;
  const RelativeState x0{Vec3(-5.0, 0.1, 0.1) / sys.length_unit,
                         Vec3(2e-5, 2e-5, 2e-5) / sys.velocity_unit(), epoch};

  // Alternating thrust segments, LVLH axes.
  PiecewiseControl control;
  control.epochs = {epoch, epoch + 0.3 * hour, epoch + 0.6 * hour};
  control.values = {Vec3(3.0, 0.0, -1.0), Vec3::Zero(), Vec3(-2.0, 1.0, 0.5)};

  RelativeDynamics dyn;
  dyn.model = RelativeModel::Plant;
  dyn.orbit = &nrho();
  dyn.sys = &sys;
  const auto rel_traj = propagate_relative(dyn, x0, control, hour);

  const SynodicState chaser0 = absolute_from_relative(x0, nrho().at(epoch), sys);
  const auto abs_traj = propagate_absolute_chaser(chaser0, nrho(), control, hour, sys);

  double worst = 0.0;
  for (int i = 0; i <= 60; ++i) {
    const double t = epoch + hour * i / 60.0;
    const RelativeState from_abs = relative_from_absolute(
        SynodicState::from_vec(abs_traj.eval(t), t), nrho().at(t), sys);
    const Vec6 from_rel = rel_traj.eval(t);
    worst = std::max(worst, (from_abs.rho - from_rel.head<3>()).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("prediction error against the plant grows quadratically in the horizon",
          "[relative]") {
  const auto& sys = earth_moon();
  const double epoch = rdv_start();
  const RelativeState x0{Vec3(-5.0, 0.1, 0.1) / sys.length_unit,
                         Vec3(2e-5, 2e-5, 2e-5) / sys.velocity_unit(), epoch};
  const auto ctx = capture_context(nrho(), epoch, sys);

  RelativeDynamics plant{RelativeModel::Plant, &nrho(), &sys, {}, {}};
  RelativeDynamics pred{RelativeModel::Prediction, nullptr, nullptr, ctx, {}};

  auto divergence = [&](double horizon_s) {
    const double span = horizon_s / sys.time_unit;
    const auto a = propagate_relative(plant, x0, PiecewiseControl::zero(), span);
    const auto b = propagate_relative(pred, x0, PiecewiseControl::zero(), span);
    return (a.eval(epoch + span).head<3>() - b.eval(epoch + span).head<3>()).norm();
  };

  const double d90 = divergence(90.0);
  const double d45 = divergence(45.0);
  // Position divergence over one 90 s horizon stays below 10 m.
  CHECK(d90 * sys.length_unit < 10.0 / 1000.0);
  const double ratio = d90 / std::max(d45, 1e-300);
  CHECK(ratio > 2.5);
  CHECK(ratio < 6.0);
}
