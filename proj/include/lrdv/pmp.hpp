// Minimum-propellant NMPC based on the Pontryagin principle: rendezvous
// Hamiltonian, costate dynamics, primer-vector bang-bang law, the TPBVP
// assembled at each sampling instant, and the receding-horizon loop.
#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrdv/bvp.hpp"
#include "lrdv/cr3bp.hpp"
#include "lrdv/relative.hpp"

namespace lrdv {

// Diagonal cost weights in the units the controller integrates in
// (normalized state and time). R has equal entries by construction, so only
// its common value matters: ||R u||_2 = r * ||u||_2.
struct CostWeights {
  Vec6 q = Vec6::Zero();
  Vec6 p = Vec6::Zero();
  double r = 1.0;
};

enum class WeightUnits { Normalized, KmSeconds, MetersSeconds };

inline const char* to_string(WeightUnits w) {
  switch (w) {
    case WeightUnits::Normalized: return "normalized";
    case WeightUnits::KmSeconds: return "km_s";
    case WeightUnits::MetersSeconds: return "m_s";
  }
  return "?";
}

struct NmpcConfig {
  double ts_seconds = 2.0;
  double tp_seconds = 90.0;
  double u_max_si = 0.02;  // m/s^2
  Vec6 q_diag = Vec6::Zero();
  Vec6 p_diag = Vec6::Zero();
  Vec3 r_diag = Vec3::Ones();
  WeightUnits weight_units = WeightUnits::Normalized;
  RelativeState reference;  // normalized LVLH
  std::vector<double> epsilon_schedule{1e-1, 1e-2, 1e-3, 1e-4};
  int mesh_points = 46;
  TpbvpSettings bvp{};

  void validate() const {
    if (!(ts_seconds > 0.0) || tp_seconds < ts_seconds)
      throw std::invalid_argument("NmpcConfig: requires Tp >= Ts > 0");
    if (!(u_max_si > 0.0)) throw std::invalid_argument("NmpcConfig: u_max must be > 0");
    if ((q_diag.array() < 0.0).any() || (p_diag.array() < 0.0).any())
      throw std::invalid_argument("NmpcConfig: Q and P must be entrywise >= 0");
    if (!(r_diag[0] > 0.0) || r_diag[0] != r_diag[1] || r_diag[0] != r_diag[2])
      throw std::invalid_argument("NmpcConfig: R must have equal positive entries");
    if (epsilon_schedule.empty())
      throw std::invalid_argument("NmpcConfig: empty smoothing schedule");
  }
};

/// Weights of the paper's cost, converted so states, controls and time are
/// all normalized inside the TPBVP regardless of the units the numbers were
/// quoted in.
inline CostWeights effective_weights(const NmpcConfig& cfg, const Cr3bpSystem& sys) {
  cfg.validate();
  CostWeights w;
  double len = 1.0, vel = 1.0, acc = 1.0, time = 1.0;
  switch (cfg.weight_units) {
    case WeightUnits::Normalized: break;
    case WeightUnits::KmSeconds:
      len = sys.length_unit;
      vel = sys.velocity_unit();
      acc = sys.accel_unit();
      time = sys.time_unit;
      break;
    case WeightUnits::MetersSeconds:
      len = sys.length_unit * 1000.0;
      vel = sys.velocity_unit() * 1000.0;
      acc = sys.accel_unit() * 1000.0;
      time = sys.time_unit;
      break;
  }
  Vec6 s;
  s << len, len, len, vel, vel, vel;
  w.q = time * (s.array() * s.array() * cfg.q_diag.array()).matrix();
  w.p = (s.array() * s.array() * cfg.p_diag.array()).matrix();
  w.r = time * acc * cfg.r_diag[0];
  return w;
}

struct Costate {
  Vec3 lambda_r = Vec3::Zero();
  Vec3 lambda_v = Vec3::Zero();

  Vec6 as_vec() const {
    Vec6 y;
    y << lambda_r, lambda_v;
    return y;
  }
  static Costate from_vec(const Vec6& y) { return Costate{y.head<3>(), y.tail<3>()}; }
};

struct ControlSample {
  double epoch = 0.0;           // normalized time
  ControlInput u;               // normalized LVLH acceleration, |u| in {0, u_max}
  double switching_value = 0.0; // Upsilon = |lambda_v| - |R|
  std::optional<Vec3> primer_direction;
};

inline Vec6 tracking_error(const RelativeState& x, const RelativeState& ref) {
  Vec6 e;
  e << x.rho - ref.rho, x.rho_dot - ref.rho_dot;
  return e;
}

/// Switching function Upsilon = ||lambda_v||_2 - ||R||_2.
inline double switching_function(const Costate& lam, const CostWeights& w) {
  return lam.lambda_v.norm() - w.r;
}

/// Bang-bang law: full thrust along the primer vector while Upsilon > 0,
/// engines off otherwise (including the singular Upsilon = 0 case).
inline ControlInput optimal_control(const Costate& lam, const CostWeights& w, double u_max) {
  const double upsilon = switching_function(lam, w);
  if (upsilon > 0.0) return ControlInput{-u_max * lam.lambda_v / lam.lambda_v.norm()};
  return ControlInput{Vec3::Zero()};
}

/// Rendezvous Hamiltonian evaluated with the frozen prediction model.
inline double hamiltonian(const RelativeState& x, const ControlInput& u, const Costate& lam,
                          const FrozenContext& ctx, const CostWeights& w,
                          const RelativeState& ref) {
  const Vec6 e = tracking_error(x, ref);
  const double tracking = (e.array() * w.q.array() * e.array()).sum();
  const Vec3 accel = prediction_accel(x, ctx, u);
  return tracking + w.r * u.u.norm() + lam.lambda_r.dot(x.rho_dot) + lam.lambda_v.dot(accel);
}

/// Costate rates -grad_x H for the frozen prediction model.
inline Costate costate_rate(const RelativeState& x, const Costate& lam, const FrozenContext& ctx,
                            const CostWeights& w, const RelativeState& ref) {
  const Vec6 e = tracking_error(x, ref);
  const Mat3 omega_x = skew(ctx.omega_il);
  const Mat3 grav = ctx.mu * gravity_gradient(x.rho + ctx.r_ot - ctx.r_om) +
                    (1.0 - ctx.mu) * gravity_gradient(x.rho + ctx.r_ot - ctx.r_oe);
  Costate rate;
  rate.lambda_r = -2.0 * (w.q.head<3>().array() * e.head<3>().array()).matrix() +
                  (omega_x * omega_x) * lam.lambda_v + grav * lam.lambda_v;
  rate.lambda_v = -2.0 * (w.q.tail<3>().array() * e.tail<3>().array()).matrix() - lam.lambda_r +
                  2.0 * omega_x.transpose() * lam.lambda_v;
  return rate;
}

/// Transversality condition at the end of the horizon.
inline Costate terminal_costate(const RelativeState& x_end, const CostWeights& w,
                                const RelativeState& ref) {
  const Vec6 e = tracking_error(x_end, ref);
  return Costate::from_vec(2.0 * (w.p.array() * e.array()).matrix());
}

/// The 12-state TPBVP of one NMPC step on the horizon [0, Tp] (normalized
/// time; the prediction model is autonomous). params[0] is the smoothing
/// width of the bang-bang law.
inline TpbvpProblem build_tpbvp(const RelativeState& x_k, const FrozenContext& ctx,
                                const CostWeights& w, double u_max, const RelativeState& ref,
                                double horizon, double epsilon = 1e-4) {
  TpbvpProblem p;
  p.dim = 12;
  p.n_left = 6;
  p.t_a = 0.0;
  p.t_b = horizon;
  p.params = VectorXd::Constant(1, epsilon);
  const Vec6 x0 = x_k.as_vec();

  p.f = [ctx, w, u_max, ref](double, const VectorXd& y, const VectorXd& par) {
    const double eps = par[0];
    const RelativeState x{y.segment<3>(0), y.segment<3>(3), 0.0};
    const Costate lam{y.segment<3>(6), y.segment<3>(9)};
    const double upsilon = lam.lambda_v.norm() - w.r;
    const double gamma = 0.5 * u_max * (1.0 + std::tanh(upsilon / eps));
    const Vec3 u = -gamma * lam.lambda_v / (lam.lambda_v.norm() + 1e-12);
    const Vec3 accel = prediction_accel(x, ctx, ControlInput{u});
    const Costate rate = costate_rate(x, lam, ctx, w, ref);
    VectorXd dy(12);
    dy << x.rho_dot, accel, rate.lambda_r, rate.lambda_v;
    return dy;
  };
  p.bc_left = [x0](const VectorXd& ya, const VectorXd&) {
    return VectorXd(ya.head<6>() - x0);
  };
  p.bc_right = [w, ref](const VectorXd& yb, const VectorXd&) {
    const RelativeState x_end{yb.segment<3>(0), yb.segment<3>(3), 0.0};
    const Costate lam_f = terminal_costate(x_end, w, ref);
    return VectorXd(yb.tail<6>() - lam_f.as_vec());
  };
  return p;
}

struct NmpcStep {
  ControlSample sample;
  TpbvpSolution solution;
  double cost = 0.0;  // value of the paper's cost along the horizon
  bool degraded = false;
  int epsilon_stages = 0;
  double wall_seconds = 0.0;
};

/// Receding-horizon controller. Owns the warm-start state; one instance per
/// scenario run (single-threaded).
class NmpcController {
 public:
  NmpcController(const Cr3bpSystem& sys, const PeriodicOrbit& orbit, const NmpcConfig& cfg)
      : sys_(sys), orbit_(orbit), cfg_(cfg), weights_(effective_weights(cfg, sys)) {
    u_max_ = from_si(sys, cfg.u_max_si * 1e-3, Quantity::Acceleration);  // m/s^2 -> km/s^2
    ts_ = cfg.ts_seconds / sys.time_unit;
    tp_ = cfg.tp_seconds / sys.time_unit;
  }

  const CostWeights& weights() const { return weights_; }
  double u_max_normalized() const { return u_max_; }
  double ts_normalized() const { return ts_; }
  double tp_normalized() const { return tp_; }

  NmpcStep step(const RelativeState& x_k) {
    const auto t_start = std::chrono::steady_clock::now();
    const FrozenContext ctx = capture_context(orbit_, x_k.epoch, sys_);
    TpbvpProblem problem = build_tpbvp(x_k, ctx, weights_, u_max_, cfg_.reference, tp_);

    NmpcStep out;
    bool solved = false;
    // Warm runs try the final smoothing width directly; failures fall back
    // to the full schedule, then to a densified one, then to degraded mode.
    std::vector<std::vector<double>> plans;
    if (warm_) plans.push_back({cfg_.epsilon_schedule.back()});
    plans.push_back(cfg_.epsilon_schedule);
    plans.push_back(densified_schedule());
    for (const auto& schedule : plans) {
      try {
        const TpbvpGuess guess = make_guess(x_k);
        TpbvpProblem prob = problem;
        set_scales(prob, guess);
        ContinuationReport report;
        out.solution = continuation_solve(prob, guess, schedule, cfg_.bvp, &report);
        out.epsilon_stages += static_cast<int>(report.attempted.size());
        solved = true;
        break;
      } catch (const BvpError&) {
        warm_.reset();  // retry cold with the longer schedule
      }
    }

    if (!solved) {
      out.degraded = true;
      out.sample = have_last_ ? last_sample_ : ControlSample{};
      out.sample.epoch = x_k.epoch;
      warm_.reset();
      out.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      return out;
    }

    const Costate lam0 = Costate::from_vec(out.solution.eval(0.0).tail<6>());
    out.sample.epoch = x_k.epoch;
    out.sample.switching_value = switching_function(lam0, weights_);
    out.sample.u = optimal_control(lam0, weights_, u_max_);
    if (lam0.lambda_v.norm() > 0.0)
      out.sample.primer_direction = Vec3(-lam0.lambda_v / lam0.lambda_v.norm());
    out.cost = horizon_cost(out.solution);
    warm_ = out.solution;
    last_sample_ = out.sample;
    have_last_ = true;
    out.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return out;
  }

  /// Paper cost of a converged horizon (Simpson on the solution mesh with
  /// the hard control law); used for logging only.
  double horizon_cost(const TpbvpSolution& sol) const {
    auto integrand = [&](double t) {
      const VectorXd y = sol.eval(t);
      const RelativeState x{y.segment<3>(0), y.segment<3>(3), 0.0};
      const Costate lam{y.segment<3>(6), y.segment<3>(9)};
      const Vec6 e = tracking_error(x, cfg_.reference);
      const ControlInput u = optimal_control(lam, weights_, u_max_);
      return (e.array() * weights_.q.array() * e.array()).sum() + weights_.r * u.u.norm();
    };
    double acc = 0.0;
    for (int i = 0; i + 1 < sol.mesh.size(); ++i) {
      const double a = sol.mesh[i], b = sol.mesh[i + 1];
      acc += (b - a) / 6.0 * (integrand(a) + 4.0 * integrand(0.5 * (a + b)) + integrand(b));
    }
    const VectorXd yf = sol.eval(tp_);
    const RelativeState xf{yf.segment<3>(0), yf.segment<3>(3), 0.0};
    const Vec6 ef = tracking_error(xf, cfg_.reference);
    return acc + (ef.array() * weights_.p.array() * ef.array()).sum();
  }

 private:
  std::vector<double> densified_schedule() const {
    std::vector<double> dense;
    const auto& s = cfg_.epsilon_schedule;
    for (std::size_t i = 0; i < s.size(); ++i) {
      dense.push_back(s[i]);
      if (i + 1 < s.size()) dense.push_back(std::sqrt(s[i] * s[i + 1]));
    }
    return dense;
  }

  TpbvpGuess make_guess(const RelativeState& x_k) const {
    TpbvpGuess g;
    g.mesh = VectorXd::LinSpaced(cfg_.mesh_points, 0.0, tp_);
    g.y.resize(12, cfg_.mesh_points);
    if (warm_) {
      // Previous horizon shifted by one sampling interval.
      for (int i = 0; i < cfg_.mesh_points; ++i)
        g.y.col(i) = warm_->eval(std::min(g.mesh[i] + ts_, tp_));
      g.y.col(0).head<6>() = x_k.as_vec();
    } else {
      const Costate lam = terminal_costate(x_k, weights_, cfg_.reference);
      VectorXd column(12);
      column << x_k.as_vec(), lam.as_vec();
      g.y = column.replicate(1, cfg_.mesh_points);
    }
    return g;
  }

  void set_scales(TpbvpProblem& prob, const TpbvpGuess& guess) const {
    auto group_scale = [&](int row0, double floor_value) {
      const double m = guess.y.middleRows<3>(row0).cwiseAbs().maxCoeff();
      return std::max(m, floor_value);
    };
    const double s_rho = group_scale(0, 1e-9);
    const double s_vel = group_scale(3, 1e-9);
    const double s_lr = group_scale(6, weights_.r);
    const double s_lv = group_scale(9, weights_.r);
    VectorXd s(12);
    s << s_rho, s_rho, s_rho, s_vel, s_vel, s_vel, s_lr, s_lr, s_lr, s_lv, s_lv, s_lv;
    prob.var_scale = s;
    prob.bc_scale = s;
  }

  const Cr3bpSystem& sys_;
  const PeriodicOrbit& orbit_;
  NmpcConfig cfg_;
  CostWeights weights_;
  double u_max_ = 0.0;
  double ts_ = 0.0;
  double tp_ = 0.0;
  std::optional<TpbvpSolution> warm_;
  ControlSample last_sample_;
  bool have_last_ = false;
};

struct StopCriteria {
  double max_duration_s = 14400.0;          // 4 h mission bound
  Vec3 box_pos_m = Vec3(1.0, 0.01, 0.01);   // component-wise |error| bounds
  Vec3 box_vel_ms = Vec3(0.01, 0.01, 0.01);
  int dwell_samples = 30;                   // consecutive in-box samples to stop
};

struct RunLogRow {
  double t_s = 0.0;        // seconds since rendezvous start
  Vec3 rho_m = Vec3::Zero();
  Vec3 v_mps = Vec3::Zero();
  Vec3 u_mps2 = Vec3::Zero();
  double u_norm_mps2 = 0.0;
  double upsilon = 0.0;
  double cost = 0.0;
  double impulse_mps = 0.0;  // cumulative
  bool degraded = false;
  double wall_seconds = 0.0;
};

struct RunLog {
  std::vector<RunLogRow> rows;
  RelativeState final_state;  // normalized, after the last applied sample
  double start_epoch = 0.0;   // normalized
  double duration_s = 0.0;
  double impulse_mps = 0.0;
  bool converged = false;     // stopped inside the convergence box
  int degraded_steps = 0;
  std::vector<std::string> diagnostics;
};

/// Closed loop of the receding-horizon controller against the full
/// time-varying plant.
inline RunLog run_closed_loop(const Cr3bpSystem& sys, const PeriodicOrbit& orbit,
                              const RelativeState& x0, const NmpcConfig& cfg,
                              const StopCriteria& stop = {},
                              const IntegratorSettings& plant_settings = {}) {
  NmpcController controller(sys, orbit, cfg);
  RelativeDynamics plant;
  plant.model = RelativeModel::Plant;
  plant.orbit = &orbit;
  plant.sys = &sys;

  const double ts = controller.ts_normalized();
  const double len_m = sys.length_unit * 1000.0;
  const double vel_mps = sys.velocity_unit() * 1000.0;
  const double acc_mps2 = sys.accel_unit() * 1000.0;

  auto in_box = [&](const RelativeState& x) {
    const Vec6 e = tracking_error(x, cfg.reference);
    for (int i = 0; i < 3; ++i) {
      if (std::abs(e[i]) * len_m > stop.box_pos_m[i]) return false;
      if (std::abs(e[3 + i]) * vel_mps > stop.box_vel_ms[i]) return false;
    }
    return true;
  };

  RunLog log;
  log.start_epoch = x0.epoch;
  RelativeState x = x0;
  double impulse = 0.0;
  int dwell = 0;
  const long max_steps = static_cast<long>(std::ceil(stop.max_duration_s / cfg.ts_seconds));

  for (long k = 0; k < max_steps; ++k) {
    NmpcStep step = controller.step(x);
    if (step.degraded) {
      ++log.degraded_steps;
      log.diagnostics.push_back("degraded step at t=" +
                                std::to_string((x.epoch - x0.epoch) * sys.time_unit) + " s");
    }

    RunLogRow row;
    row.t_s = (x.epoch - x0.epoch) * sys.time_unit;
    row.rho_m = x.rho * len_m;
    row.v_mps = x.rho_dot * vel_mps;
    row.u_mps2 = step.sample.u.u * acc_mps2;
    row.u_norm_mps2 = row.u_mps2.norm();
    row.upsilon = step.sample.switching_value;
    row.cost = step.cost;
    row.degraded = step.degraded;
    row.wall_seconds = step.wall_seconds;
    impulse += row.u_norm_mps2 * cfg.ts_seconds;
    row.impulse_mps = impulse;
    log.rows.push_back(row);

    const auto traj =
        propagate_relative(plant, x, PiecewiseControl::constant(step.sample.u.u), ts,
                           plant_settings);
    x = RelativeState::from_vec(traj.eval(x.epoch + ts), x.epoch + ts);

    dwell = in_box(x) ? dwell + 1 : 0;
    if (dwell >= stop.dwell_samples) {
      log.converged = true;
      break;
    }
  }

  log.final_state = x;
  log.duration_s = (x.epoch - x0.epoch) * sys.time_unit;
  log.impulse_mps = impulse;
  return log;
}

}  // namespace lrdv
