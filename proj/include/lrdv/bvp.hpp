// Two-point boundary value problem solver: 3-stage Lobatto IIIA collocation
// (the classic MIRK scheme of bvp4c-type codes), damped Newton iteration on
// the block-sparse collocation system, defect-driven mesh refinement, and
// parameter continuation for discontinuity smoothing.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace lrdv {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct TpbvpProblem {
  int dim = 0;     // number of scalar differential equations
  int n_left = 0;  // scalar boundary residuals at t_a (dim - n_left at t_b)
  double t_a = 0.0;
  double t_b = 1.0;
  VectorXd params;  // continuation parameters, passed through to callbacks

  std::function<VectorXd(double, const VectorXd&, const VectorXd&)> f;
  std::function<VectorXd(const VectorXd&, const VectorXd&)> bc_left;
  std::function<VectorXd(const VectorXd&, const VectorXd&)> bc_right;
  // Optional analytic df/dy; finite differences are used when absent.
  std::function<MatrixXd(double, const VectorXd&, const VectorXd&)> f_jac;

  // Optional magnitude hints: solve in y./var_scale, measure boundary
  // residuals in units of bc_scale. Empty means all ones.
  VectorXd var_scale;
  VectorXd bc_scale;
};

struct TpbvpSettings {
  double tol = 1e-6;      // max allowed scaled rms defect per interval
  double bc_tol = 1e-8;   // max allowed scaled boundary residual
  int max_nodes = 1000;
  int max_newton_iter = 12;
  int max_mesh_iter = 12;
  bool fixed_mesh = false;  // solve on the given mesh, skip refinement
  std::ostream* trace = nullptr;
};

struct TpbvpGuess {
  VectorXd mesh;  // strictly increasing epochs
  MatrixXd y;     // dim x mesh.size()

  static TpbvpGuess uniform(const TpbvpProblem& p, int nodes, const VectorXd& y_const) {
    TpbvpGuess g;
    g.mesh = VectorXd::LinSpaced(nodes, p.t_a, p.t_b);
    g.y = y_const.replicate(1, nodes);
    return g;
  }
};

struct TpbvpSolution {
  VectorXd mesh;
  MatrixXd y;  // dim x m
  MatrixXd f;  // dim x m, derivatives at the mesh (for the interpolant)
  double residual_norm = 0.0;  // max scaled rms defect over intervals
  double bc_residual = 0.0;
  int newton_iterations = 0;

  VectorXd eval(double t) const {
    const int m = static_cast<int>(mesh.size());
    int lo = 0, hi = m - 1;
    while (hi - lo > 1) {
      const int mid = (lo + hi) / 2;
      if (t < mesh[mid])
        hi = mid;
      else
        lo = mid;
    }
    const double h = mesh[lo + 1] - mesh[lo];
    const double th = (t - mesh[lo]) / h;
    // Cubic Hermite in nested form.
    const VectorXd dy = y.col(lo + 1) - y.col(lo);
    const VectorXd c2 = h * f.col(lo) - dy;
    const VectorXd c3 = dy - h * f.col(lo + 1) - c2;
    return y.col(lo) + th * (dy + (1.0 - th) * (c2 + th * c3));
  }

  VectorXd eval_derivative(double t) const {
    const int m = static_cast<int>(mesh.size());
    int lo = 0, hi = m - 1;
    while (hi - lo > 1) {
      const int mid = (lo + hi) / 2;
      if (t < mesh[mid])
        hi = mid;
      else
        lo = mid;
    }
    const double h = mesh[lo + 1] - mesh[lo];
    const double th = (t - mesh[lo]) / h;
    const VectorXd dy = y.col(lo + 1) - y.col(lo);
    const VectorXd c2 = h * f.col(lo) - dy;
    const VectorXd c3 = dy - h * f.col(lo + 1) - c2;
    // d/dth of c0 + th*(dy + (1-th)*(c2 + th*c3)), divided by h.
    return (dy + (1.0 - 2.0 * th) * c2 + (2.0 * th - 3.0 * th * th) * c3) / h;
  }

  TpbvpGuess as_guess() const { return TpbvpGuess{mesh, y}; }
};

struct BvpError : std::runtime_error {
  enum class Kind { NewtonDivergence, SingularJacobian, MeshBudgetExhausted };
  Kind kind;
  TpbvpGuess last_iterate;  // for warm-start reuse by the caller
  double failed_epsilon = std::numeric_limits<double>::quiet_NaN();

  BvpError(Kind k, std::string msg, TpbvpGuess last)
      : std::runtime_error(std::move(msg)), kind(k), last_iterate(std::move(last)) {}
};

namespace bvp_detail {

struct ScaledProblem {
  const TpbvpProblem* p;
  VectorXd s;       // variable scale
  VectorXd bs_a;    // boundary residual scales
  VectorXd bs_b;

  VectorXd f(double t, const VectorXd& z) const {
    return p->f(t, (s.array() * z.array()).matrix(), p->params).cwiseQuotient(s);
  }
  MatrixXd f_jac(double t, const VectorXd& z) const {
    const VectorXd y = (s.array() * z.array()).matrix();
    if (p->f_jac) {
      MatrixXd j = p->f_jac(t, y, p->params);
      // dz' = S^-1 J S
      return s.cwiseInverse().asDiagonal() * j * s.asDiagonal();
    }
    const int n = p->dim;
    MatrixXd j(n, n);
    const VectorXd f0 = f(t, z);
    for (int c = 0; c < n; ++c) {
      VectorXd zp = z;
      const double step = 1.4901161193847656e-08 * std::max(1.0, std::abs(z[c]));
      zp[c] += step;
      j.col(c) = (f(t, zp) - f0) / step;
    }
    return j;
  }
  VectorXd bc_a(const VectorXd& z0) const {
    return p->bc_left((s.array() * z0.array()).matrix(), p->params).cwiseQuotient(bs_a);
  }
  VectorXd bc_b(const VectorXd& zm) const {
    return p->bc_right((s.array() * zm.array()).matrix(), p->params).cwiseQuotient(bs_b);
  }
  MatrixXd bc_a_jac(const VectorXd& z0) const {
    const int n = p->dim;
    const int na = p->n_left;
    MatrixXd j(na, n);
    const VectorXd g0 = bc_a(z0);
    for (int c = 0; c < n; ++c) {
      VectorXd zp = z0;
      const double step = 1.4901161193847656e-08 * std::max(1.0, std::abs(z0[c]));
      zp[c] += step;
      j.col(c) = (bc_a(zp) - g0) / step;
    }
    return j;
  }
  MatrixXd bc_b_jac(const VectorXd& zm) const {
    const int n = p->dim;
    const int nb = p->dim - p->n_left;
    MatrixXd j(nb, n);
    const VectorXd g0 = bc_b(zm);
    for (int c = 0; c < n; ++c) {
      VectorXd zp = zm;
      const double step = 1.4901161193847656e-08 * std::max(1.0, std::abs(zm[c]));
      zp[c] += step;
      j.col(c) = (bc_b(zp) - g0) / step;
    }
    return j;
  }
};

struct CollocationState {
  VectorXd mesh;   // m
  MatrixXd z;      // dim x m, scaled variables
  MatrixXd fz;     // dim x m, scaled derivatives at nodes
  MatrixXd z_mid;  // dim x (m-1)
  MatrixXd f_mid;  // dim x (m-1)
  MatrixXd phi;    // dim x (m-1), collocation residuals
  VectorXd ga, gb;

  void refresh(const ScaledProblem& sp) {
    const int m = static_cast<int>(mesh.size());
    const int n = static_cast<int>(z.rows());
    fz.resize(n, m);
    for (int i = 0; i < m; ++i) fz.col(i) = sp.f(mesh[i], z.col(i));
    z_mid.resize(n, m - 1);
    f_mid.resize(n, m - 1);
    phi.resize(n, m - 1);
    for (int i = 0; i < m - 1; ++i) {
      const double h = mesh[i + 1] - mesh[i];
      z_mid.col(i) = 0.5 * (z.col(i) + z.col(i + 1)) - (h / 8.0) * (fz.col(i + 1) - fz.col(i));
      f_mid.col(i) = sp.f(0.5 * (mesh[i] + mesh[i + 1]), z_mid.col(i));
      phi.col(i) = z.col(i + 1) - z.col(i) -
                   (h / 6.0) * (fz.col(i) + 4.0 * f_mid.col(i) + fz.col(i + 1));
    }
    ga = sp.bc_a(z.col(0));
    gb = sp.bc_b(z.col(m - 1));
  }

  double residual_norm2() const {
    return std::sqrt(phi.squaredNorm() + ga.squaredNorm() + gb.squaredNorm());
  }
};

inline double max_abs(const VectorXd& v) {
  return v.size() > 0 ? v.cwiseAbs().maxCoeff() : 0.0;
}

// Cubic Hermite interpolation of the scaled solution inside interval i.
inline VectorXd interp_z(const CollocationState& cs, int i, double theta) {
  const double h = cs.mesh[i + 1] - cs.mesh[i];
  const VectorXd dy = cs.z.col(i + 1) - cs.z.col(i);
  const VectorXd c2 = h * cs.fz.col(i) - dy;
  const VectorXd c3 = dy - h * cs.fz.col(i + 1) - c2;
  return cs.z.col(i) + theta * (dy + (1.0 - theta) * (c2 + theta * c3));
}

inline VectorXd interp_dz(const CollocationState& cs, int i, double theta) {
  const double h = cs.mesh[i + 1] - cs.mesh[i];
  const VectorXd dy = cs.z.col(i + 1) - cs.z.col(i);
  const VectorXd c2 = h * cs.fz.col(i) - dy;
  const VectorXd c3 = dy - h * cs.fz.col(i + 1) - c2;
  return (dy + (1.0 - 2.0 * theta) * c2 + (2.0 * theta - 3.0 * theta * theta) * c3) / h;
}

// Scaled rms defect of the interpolant over each interval, evaluated with
// a 5-point Lobatto rule whose end-point contributions vanish because the
// interpolant satisfies the ODE exactly at the mesh nodes.
inline VectorXd rms_defects(const ScaledProblem& sp, const CollocationState& cs) {
  const int m = static_cast<int>(cs.mesh.size());
  VectorXd rms(m - 1);
  const double off = 0.5 * std::sqrt(3.0 / 7.0);
  for (int i = 0; i < m - 1; ++i) {
    const double h = cs.mesh[i + 1] - cs.mesh[i];
    double q[3];
    const double thetas[3] = {0.5 - off, 0.5, 0.5 + off};
    for (int k = 0; k < 3; ++k) {
      const double t = cs.mesh[i] + thetas[k] * h;
      const VectorXd z = interp_z(cs, i, thetas[k]);
      const VectorXd dz = interp_dz(cs, i, thetas[k]);
      const VectorXd fv = sp.f(t, z);
      const VectorXd r = (dz - fv).cwiseQuotient(VectorXd::Ones(fv.size()) + fv.cwiseAbs());
      q[k] = r.norm();
    }
    rms[i] = std::sqrt(0.5 * (49.0 / 90.0 * (q[0] * q[0] + q[2] * q[2]) +
                              32.0 / 45.0 * q[1] * q[1]));
  }
  return rms;
}

}  // namespace bvp_detail

/// Solve the TPBVP by collocation on the supplied initial mesh/guess.
/// Throws BvpError carrying the last iterate on failure.
inline TpbvpSolution solve(const TpbvpProblem& problem, const TpbvpGuess& guess,
                           const TpbvpSettings& settings = {}) {
  using namespace bvp_detail;
  const int n = problem.dim;
  const int na = problem.n_left;
  const int nb = n - na;
  if (n <= 0 || na < 0 || nb < 0)
    throw std::invalid_argument("solve: inconsistent dimensions (n_left must be in [0, dim])");
  if (guess.mesh.size() < 2 || guess.y.rows() != n || guess.y.cols() != guess.mesh.size())
    throw std::invalid_argument("solve: guess shape does not match the problem");
  for (int i = 0; i + 1 < guess.mesh.size(); ++i)
    if (!(guess.mesh[i + 1] > guess.mesh[i]))
      throw std::invalid_argument("solve: guess mesh is not strictly increasing");

  ScaledProblem sp;
  sp.p = &problem;
  sp.s = problem.var_scale.size() == n ? problem.var_scale : VectorXd::Ones(n);
  VectorXd bsc = problem.bc_scale.size() == n ? problem.bc_scale : VectorXd::Ones(n);
  sp.bs_a = bsc.head(na);
  sp.bs_b = bsc.tail(nb);

  CollocationState cs;
  cs.mesh = guess.mesh;
  cs.z = guess.y.array().colwise() / sp.s.array();

  auto current_guess = [&]() {
    TpbvpGuess g;
    g.mesh = cs.mesh;
    g.y = cs.z.array().colwise() * sp.s.array();
    return g;
  };

  int total_newton = 0;
  for (int mesh_iter = 0; mesh_iter < settings.max_mesh_iter; ++mesh_iter) {
    const int m = static_cast<int>(cs.mesh.size());

    // --- damped Newton on the collocation system ---
    bool newton_ok = false;
    cs.refresh(sp);
    for (int it = 0; it < settings.max_newton_iter; ++it) {
      // Convergence: collocation residuals small relative to the local
      // derivative magnitude, boundary residuals below bc_tol.
      bool conv = max_abs(cs.ga) <= settings.bc_tol &&
                  max_abs(cs.gb) <= settings.bc_tol;
      if (conv) {
        for (int i = 0; i < m - 1 && conv; ++i) {
          const double h = cs.mesh[i + 1] - cs.mesh[i];
          const double tol_r = (2.0 / 3.0) * h * 0.05 * settings.tol;
          for (int r = 0; r < n; ++r) {
            if (std::abs(cs.phi(r, i)) > tol_r * (1.0 + std::abs(cs.f_mid(r, i)))) {
              conv = false;
              break;
            }
          }
        }
      }
      if (conv) {
        newton_ok = true;
        break;
      }

      ++total_newton;
      // Assemble the sparse Jacobian.
      std::vector<Eigen::Triplet<double>> trips;
      trips.reserve(static_cast<std::size_t>(m) * n * n * 2 + 2 * n * n);
      const MatrixXd ja = sp.bc_a_jac(cs.z.col(0));
      for (int r = 0; r < na; ++r)
        for (int c = 0; c < n; ++c) trips.emplace_back(r, c, ja(r, c));
      for (int i = 0; i < m - 1; ++i) {
        const double h = cs.mesh[i + 1] - cs.mesh[i];
        const MatrixXd ji = sp.f_jac(cs.mesh[i], cs.z.col(i));
        const MatrixXd jip = sp.f_jac(cs.mesh[i + 1], cs.z.col(i + 1));
        const MatrixXd jm = sp.f_jac(0.5 * (cs.mesh[i] + cs.mesh[i + 1]), cs.z_mid.col(i));
        const MatrixXd id = MatrixXd::Identity(n, n);
        const MatrixXd dphi_i =
            -id - (h / 6.0) * (ji + 4.0 * jm * (0.5 * id + (h / 8.0) * ji));
        const MatrixXd dphi_ip =
            id - (h / 6.0) * (jip + 4.0 * jm * (0.5 * id - (h / 8.0) * jip));
        const int row0 = na + i * n;
        for (int r = 0; r < n; ++r)
          for (int c = 0; c < n; ++c) {
            trips.emplace_back(row0 + r, i * n + c, dphi_i(r, c));
            trips.emplace_back(row0 + r, (i + 1) * n + c, dphi_ip(r, c));
          }
      }
      const MatrixXd jb = sp.bc_b_jac(cs.z.col(m - 1));
      for (int r = 0; r < nb; ++r)
        for (int c = 0; c < n; ++c)
          trips.emplace_back(na + (m - 1) * n + r, (m - 1) * n + c, jb(r, c));

      Eigen::SparseMatrix<double> jac(n * m, n * m);
      jac.setFromTriplets(trips.begin(), trips.end());
      Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
      lu.analyzePattern(jac);
      lu.factorize(jac);
      if (lu.info() != Eigen::Success)
        throw BvpError(BvpError::Kind::SingularJacobian,
                       "solve: singular collocation Jacobian", current_guess());

      VectorXd rhs(n * m);
      rhs.head(na) = cs.ga;
      for (int i = 0; i < m - 1; ++i) rhs.segment(na + i * n, n) = cs.phi.col(i);
      rhs.tail(nb) = cs.gb;
      const VectorXd step = lu.solve(rhs);

      // Backtracking line search on the residual norm.
      const double res0 = cs.residual_norm2();
      const MatrixXd z_old = cs.z;
      double alpha = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 7; ++ls) {
        cs.z = z_old;
        for (int i = 0; i < m; ++i) cs.z.col(i) -= alpha * step.segment(i * n, n);
        cs.refresh(sp);
        if (cs.residual_norm2() <= (1.0 - 0.2 * alpha) * res0 ||
            cs.residual_norm2() < 1e-14) {
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (settings.trace) {
        *settings.trace << "newton iter=" << total_newton << " mesh=" << m
                        << " res=" << cs.residual_norm2() << " alpha=" << alpha
                        << (accepted ? "" : " (line search stalled)") << "\n";
      }
      if (!accepted) {
        cs.z = z_old;
        cs.refresh(sp);
        // A stall at a residual near the attainable floating-point floor is
        // convergence; finite-difference Jacobians cannot reduce it further.
        if (cs.residual_norm2() <=
            1e-12 * std::sqrt(static_cast<double>(n) * static_cast<double>(m))) {
          newton_ok = true;
        }
        break;
      }
    }
    if (!newton_ok) {
      // Re-test convergence once more; the last accepted step may be good.
      bool conv = max_abs(cs.ga) <= settings.bc_tol &&
                  max_abs(cs.gb) <= settings.bc_tol;
      for (int i = 0; i < m - 1 && conv; ++i) {
        const double h = cs.mesh[i + 1] - cs.mesh[i];
        const double tol_r = (2.0 / 3.0) * h * 0.05 * settings.tol;
        for (int r = 0; r < n; ++r)
          if (std::abs(cs.phi(r, i)) > tol_r * (1.0 + std::abs(cs.f_mid(r, i)))) {
            conv = false;
            break;
          }
      }
      if (!conv && cs.residual_norm2() <=
                       1e-12 * std::sqrt(static_cast<double>(n) * static_cast<double>(m)))
        conv = true;
      if (!conv)
        throw BvpError(BvpError::Kind::NewtonDivergence,
                       "solve: Newton iteration failed to converge (residual " +
                           std::to_string(cs.residual_norm2()) + " on " + std::to_string(m) +
                           " nodes)",
                       current_guess());
    }

    // --- defect estimate and mesh refinement ---
    const VectorXd rms = rms_defects(sp, cs);
    const double max_rms = rms.maxCoeff();
    if (settings.trace)
      *settings.trace << "mesh iter=" << mesh_iter << " nodes=" << m << " defect=" << max_rms
                      << "\n";
    if (max_rms <= settings.tol || settings.fixed_mesh) {
      TpbvpSolution sol;
      sol.mesh = cs.mesh;
      sol.y = cs.z.array().colwise() * sp.s.array();
      sol.f.resize(n, m);
      for (int i = 0; i < m; ++i) sol.f.col(i) = problem.f(cs.mesh[i], sol.y.col(i), problem.params);
      sol.residual_norm = max_rms;
      sol.bc_residual = std::max(max_abs(cs.ga), max_abs(cs.gb));
      sol.newton_iterations = total_newton;
      return sol;
    }

    std::vector<double> new_mesh;
    std::vector<VectorXd> new_z;
    new_mesh.push_back(cs.mesh[0]);
    new_z.push_back(cs.z.col(0));
    for (int i = 0; i < m - 1; ++i) {
      if (rms[i] > settings.tol) {
        if (rms[i] >= 100.0 * settings.tol) {
          new_mesh.push_back(cs.mesh[i] + (cs.mesh[i + 1] - cs.mesh[i]) / 3.0);
          new_z.push_back(interp_z(cs, i, 1.0 / 3.0));
          new_mesh.push_back(cs.mesh[i] + 2.0 * (cs.mesh[i + 1] - cs.mesh[i]) / 3.0);
          new_z.push_back(interp_z(cs, i, 2.0 / 3.0));
        } else {
          new_mesh.push_back(0.5 * (cs.mesh[i] + cs.mesh[i + 1]));
          new_z.push_back(interp_z(cs, i, 0.5));
        }
      }
      new_mesh.push_back(cs.mesh[i + 1]);
      new_z.push_back(cs.z.col(i + 1));
    }
    if (static_cast<int>(new_mesh.size()) > settings.max_nodes)
      throw BvpError(BvpError::Kind::MeshBudgetExhausted,
                     "solve: mesh refinement needs " + std::to_string(new_mesh.size()) +
                         " nodes, budget is " + std::to_string(settings.max_nodes),
                     current_guess());
    cs.mesh.resize(new_mesh.size());
    cs.z.resize(n, new_mesh.size());
    for (std::size_t i = 0; i < new_mesh.size(); ++i) {
      cs.mesh[i] = new_mesh[i];
      cs.z.col(i) = new_z[i];
    }
  }
  throw BvpError(BvpError::Kind::NewtonDivergence,
                 "solve: defect still above tolerance after max mesh iterations",
                 current_guess());
}

struct ContinuationReport {
  std::vector<double> attempted;  // every epsilon tried, in order
  std::vector<double> inserted;   // bisection values added to the schedule
};

/// Solve with the problem's leading parameter swept over `schedule`
/// (decreasing smoothing values), warm-starting each stage from the last.
/// A failed stage inserts the geometric midpoint before retrying; after
/// `max_insertions` the error is rethrown annotated with the failing value.
template <class SolveFn>
TpbvpSolution continuation_solve_with(SolveFn&& solve_fn, TpbvpProblem problem,
                                      const TpbvpGuess& guess, std::vector<double> schedule,
                                      const TpbvpSettings& settings = {},
                                      ContinuationReport* report = nullptr,
                                      int max_insertions = 8) {
  if (schedule.empty()) throw std::invalid_argument("continuation_solve: empty schedule");
  if (problem.params.size() < 1) problem.params = VectorXd::Zero(1);

  TpbvpGuess current = guess;
  TpbvpSolution sol;
  bool have_prev = false;
  double prev_eps = 0.0;
  int insertions = 0;
  std::vector<double> pending(schedule.rbegin(), schedule.rend());  // stack, front at back

  while (!pending.empty()) {
    const double eps = pending.back();
    problem.params[0] = eps;
    if (report) report->attempted.push_back(eps);
    try {
      sol = solve_fn(problem, current, settings);
      current = sol.as_guess();
      have_prev = true;
      prev_eps = eps;
      pending.pop_back();
    } catch (BvpError& err) {
      if (!have_prev || insertions >= max_insertions) {
        err.failed_epsilon = eps;
        throw;
      }
      const double mid = std::sqrt(prev_eps * eps);
      if (!(mid > eps && mid < prev_eps)) {
        err.failed_epsilon = eps;
        throw;
      }
      pending.push_back(mid);
      ++insertions;
      if (report) report->inserted.push_back(mid);
    }
  }
  return sol;
}

inline TpbvpSolution continuation_solve(const TpbvpProblem& problem, const TpbvpGuess& guess,
                                        const std::vector<double>& schedule,
                                        const TpbvpSettings& settings = {},
                                        ContinuationReport* report = nullptr) {
  return continuation_solve_with(
      [](const TpbvpProblem& p, const TpbvpGuess& g, const TpbvpSettings& s) {
        return solve(p, g, s);
      },
      problem, guess, schedule, settings, report);
}

}  // namespace lrdv
