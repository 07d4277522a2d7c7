#include "mffl/hjb_fp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace mffl {

namespace {

double interp_row(const Grid1D& grid, const Eigen::MatrixXd& m, int node, double x) {
  require(node >= 0 && node <= grid.nt, "time node out of range");
  const double clamped = std::clamp(x, grid.x_min, grid.x_max);
  const double pos = (clamped - grid.x_min) / grid.dx();
  const int i = std::min(static_cast<int>(pos), grid.nx - 2);
  const double frac = pos - static_cast<double>(i);
  return (1.0 - frac) * m(node, i) + frac * m(node, i + 1);
}

// Trapezoidal rule over grid nodes.
double trapezoid(const Eigen::VectorXd& values, double dx) {
  const Eigen::Index n = values.size();
  double total = 0.5 * (values[0] + values[n - 1]);
  for (Eigen::Index i = 1; i + 1 < n; ++i) total += values[i];
  return total * dx;
}

// Centered first/second differences with one-sided first derivatives at the
// edges; the edge second derivative copies the adjacent interior stencil.
void row_derivatives(const Eigen::VectorXd& v, double dx, Eigen::VectorXd& z,
                     Eigen::VectorXd& gamma) {
  const Eigen::Index n = v.size();
  z.resize(n);
  gamma.resize(n);
  const double inv_dx = 1.0 / dx;
  const double inv_dx2 = inv_dx * inv_dx;
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    z[i] = 0.5 * (v[i + 1] - v[i - 1]) * inv_dx;
    gamma[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) * inv_dx2;
  }
  z[0] = (v[1] - v[0]) * inv_dx;
  z[n - 1] = (v[n - 1] - v[n - 2]) * inv_dx;
  gamma[0] = (v[2] - 2.0 * v[1] + v[0]) * inv_dx2;
  gamma[n - 1] = (v[n - 1] - 2.0 * v[n - 2] + v[n - 3]) * inv_dx2;
}

// Reward and drift tabulated over (u, x); column i is contiguous in u.
struct ProblemTables {
  Eigen::MatrixXd reward;  // points x nx
  Eigen::MatrixXd drift;   // points x nx
  double max_abs_drift = 0.0;
};

ProblemTables tabulate(const HjbProblem& p, const Grid1D& grid) {
  p.controls.validate();
  require(static_cast<bool>(p.running_xu), "problem needs a running reward");
  require(static_cast<bool>(p.drift_xu), "problem needs a drift");
  ProblemTables t;
  t.reward.resize(p.controls.points, grid.nx);
  t.drift.resize(p.controls.points, grid.nx);
  for (int i = 0; i < grid.nx; ++i) {
    const double x = grid.x(i);
    for (int j = 0; j < p.controls.points; ++j) {
      const double u = p.controls.u(j);
      t.reward(j, i) = p.running_xu(x, u);
      t.drift(j, i) = p.drift_xu(x, u);
    }
  }
  t.max_abs_drift = t.drift.cwiseAbs().maxCoeff();
  require(all_finite(t.reward) && all_finite(t.drift),
          "running reward or drift is non-finite on the grid");
  return t;
}

// Hamiltonian sup and argmax for one time slice given the value row.
// Ascending scan with strict improvement breaks ties to the smallest u.
void slice_hamiltonian(const Eigen::VectorXd& v_row, const ProblemTables& tables,
                       const HjbProblem& p, const Grid1D& grid, int time_node,
                       Eigen::VectorXd* h_out, Eigen::VectorXd* u_out) {
  Eigen::VectorXd z, gamma;
  row_derivatives(v_row, grid.dx(), z, gamma);
  const double half_sigma2 = 0.5 * p.sigma * p.sigma;
  const int nu = p.controls.points;
  if (h_out) h_out->resize(grid.nx);
  if (u_out) u_out->resize(grid.nx);
  for (int i = 0; i < grid.nx; ++i) {
    const double* reward_col = tables.reward.col(i).data();
    const double* drift_col = tables.drift.col(i).data();
    double best = -std::numeric_limits<double>::infinity();
    int best_j = 0;
    const double zi = z[i];
    for (int j = 0; j < nu; ++j) {
      const double val = reward_col[j] + zi * drift_col[j];
      if (val > best) {
        best = val;
        best_j = j;
      }
    }
    if (h_out) {
      double h = best + half_sigma2 * gamma[i];
      if (p.running_tx) h += p.running_tx(time_node, grid.x(i));
      (*h_out)[i] = h;
    }
    if (u_out) (*u_out)[i] = p.controls.u(best_j);
  }
}

}  // namespace

Grid1D Grid1D::make(double x_min, double x_max, int nx, double t0, double horizon,
                    int nt) {
  require(x_max > x_min, "grid needs x_max > x_min");
  require(nx >= 3, "grid needs at least 3 space nodes");
  require(horizon > t0, "grid needs horizon > t0");
  require(nt >= 1, "grid needs at least one time step");
  return Grid1D{x_min, x_max, nx, t0, horizon, nt};
}

Grid1D Grid1D::stable(double x_min, double x_max, int nx, double t0, double horizon,
                      double sigma, double max_drift) {
  require(x_max > x_min && nx >= 3 && horizon > t0, "invalid grid extents");
  const double dx = (x_max - x_min) / static_cast<double>(nx - 1);
  const double limit = stability_limit(dx, sigma, max_drift);
  const int nt = std::max(1, static_cast<int>(std::ceil((horizon - t0) / limit)));
  return make(x_min, x_max, nx, t0, horizon, nt);
}

double stability_limit(double dx, double sigma, double max_drift) {
  return 0.9 * dx * dx / (sigma * sigma + dx * std::abs(max_drift) + 1e-12);
}

void check_stability(const Grid1D& grid, double sigma, double max_drift) {
  const double limit = stability_limit(grid.dx(), sigma, max_drift);
  if (grid.dt() > limit)
    throw StabilityError("dt " + std::to_string(grid.dt()) +
                         " exceeds the stability bound " + std::to_string(limit) +
                         " (need nt >= " +
                         std::to_string(static_cast<long>(
                             std::ceil((grid.horizon - grid.t0) / limit))) +
                         ")");
}

void ControlSet::validate() const {
  require(u_max > u_min, "control set needs u_max > u_min");
  require(points >= 2, "control set needs at least two points");
}

double GridValueFunction::at(int node, double x) const {
  return interp_row(grid, v, node, x);
}

Eigen::VectorXd GridValueFunction::slope(int node) const {
  Eigen::VectorXd z, gamma;
  row_derivatives(v.row(node), grid.dx(), z, gamma);
  return z;
}

Eigen::VectorXd GridValueFunction::curvature(int node) const {
  Eigen::VectorXd z, gamma;
  row_derivatives(v.row(node), grid.dx(), z, gamma);
  return gamma;
}

double ControlGrid::at(int node, double x) const {
  return interp_row(grid, u, node, x);
}

namespace {

double weighted_trapezoid(const Grid1D& grid, const Eigen::VectorXd& row,
                          const std::function<double(double)>& weight) {
  Eigen::VectorXd values(grid.nx);
  for (int i = 0; i < grid.nx; ++i) values[i] = row[i] * weight(grid.x(i));
  return trapezoid(values, grid.dx());
}

}  // namespace

double DensityGrid::mass(int node) const {
  return trapezoid(mu.row(node), grid.dx());
}

double DensityGrid::mean(int node) const {
  const Eigen::VectorXd row = mu.row(node);
  return weighted_trapezoid(grid, row, [](double x) { return x; }) / mass(node);
}

double DensityGrid::variance(int node) const {
  const double m1 = mean(node);
  const Eigen::VectorXd row = mu.row(node);
  return weighted_trapezoid(grid, row, [m1](double x) { return (x - m1) * (x - m1); }) /
         mass(node);
}

HamiltonianResult hamiltonian_pointwise(
    double x, double z, double gamma, const std::function<double(double, double)>& f,
    const std::function<double(double, double)>& b, double sigma,
    const ControlSet& controls) {
  controls.validate();
  double best = -std::numeric_limits<double>::infinity();
  double best_u = controls.u(0);
  for (int j = 0; j < controls.points; ++j) {
    const double u = controls.u(j);
    const double val = f(x, u) + z * b(x, u);
    if (val > best) {
      best = val;
      best_u = u;
    }
  }
  return {best + 0.5 * sigma * sigma * gamma, best_u};
}

HjbSolution solve_hjb_backward(const HjbProblem& problem, const Grid1D& grid) {
  require(static_cast<bool>(problem.terminal), "problem needs terminal data");
  const ProblemTables tables = tabulate(problem, grid);
  check_stability(grid, problem.sigma, tables.max_abs_drift);

  HjbSolution sol;
  sol.value.grid = grid;
  sol.value.v.resize(grid.nt + 1, grid.nx);
  sol.control.grid = grid;
  sol.control.controls = problem.controls;
  sol.control.u.resize(grid.nt + 1, grid.nx);

  for (int i = 0; i < grid.nx; ++i) sol.value.v(grid.nt, i) = problem.terminal(grid.x(i));
  require(sol.value.v.row(grid.nt).allFinite(),
          "terminal data is non-finite on the grid");

  const double dt = grid.dt();
  Eigen::VectorXd h, u;
  for (int n = grid.nt - 1; n >= 0; --n) {
    const Eigen::VectorXd v_next = sol.value.v.row(n + 1);
    slice_hamiltonian(v_next, tables, problem, grid, n + 1, &h, &u);
    sol.value.v.row(n) = (v_next + dt * h).transpose();
    sol.control.u.row(n + 1) = u.transpose();
    if (!sol.value.v.row(n).allFinite())
      throw DivergenceError("HJB sweep produced non-finite values at time slice " +
                            std::to_string(n));
  }
  // Control at the initial slice from the final value row.
  const Eigen::VectorXd v0 = sol.value.v.row(0);
  slice_hamiltonian(v0, tables, problem, grid, 0, nullptr, &u);
  sol.control.u.row(0) = u.transpose();
  return sol;
}

ControlGrid control_from_value(const GridValueFunction& v, const HjbProblem& problem) {
  require(all_finite(v.v), "value function must be finite");
  const Grid1D& grid = v.grid;
  const ProblemTables tables = tabulate(problem, grid);
  ControlGrid out;
  out.grid = grid;
  out.controls = problem.controls;
  out.u.resize(grid.nt + 1, grid.nx);
  Eigen::VectorXd u;
  for (int n = 0; n <= grid.nt; ++n) {
    const Eigen::VectorXd row = v.v.row(n);
    slice_hamiltonian(row, tables, problem, grid, n, nullptr, &u);
    out.u.row(n) = u.transpose();
  }
  return out;
}

Eigen::MatrixXd drift_from_control(const ControlGrid& control,
                                   const std::function<double(double, double)>& drift_xu) {
  const Grid1D& grid = control.grid;
  Eigen::MatrixXd b(grid.nt + 1, grid.nx);
  for (int n = 0; n <= grid.nt; ++n)
    for (int i = 0; i < grid.nx; ++i) b(n, i) = drift_xu(grid.x(i), control.u(n, i));
  return b;
}

DensityGrid solve_fp_forward(const Eigen::VectorXd& mu0,
                             const Eigen::MatrixXd& drift_nodes, double sigma,
                             const Grid1D& grid) {
  require(mu0.size() == grid.nx, "initial density does not match the grid");
  require(drift_nodes.rows() == grid.nt + 1 && drift_nodes.cols() == grid.nx,
          "drift grid does not match the mesh");
  require(mu0.minCoeff() >= 0.0, "initial density must be non-negative");
  check_stability(grid, sigma, drift_nodes.cwiseAbs().maxCoeff());

  DensityGrid out;
  out.grid = grid;
  out.mu.resize(grid.nt + 1, grid.nx);
  out.mu.row(0) = mu0.transpose();
  require(std::abs(out.mass(0) - 1.0) <= 1e-8, "initial density must have unit mass");

  const double dx = grid.dx();
  const double dt = grid.dt();
  const double diffusion = 0.5 * sigma * sigma;
  const int nx = grid.nx;
  Eigen::VectorXd flux(nx - 1);
  Eigen::VectorXd current = mu0;
  Eigen::VectorXd next(nx);
  for (int n = 0; n < grid.nt; ++n) {
    // Interface fluxes between nodes i and i+1; boundary flux is zero.
    for (int i = 0; i + 1 < nx; ++i) {
      const double b_face = 0.5 * (drift_nodes(n, i) + drift_nodes(n, i + 1));
      const double upwind = b_face >= 0.0 ? current[i] : current[i + 1];
      flux[i] = b_face * upwind - diffusion * (current[i + 1] - current[i]) / dx;
    }
    // Interior cells have width dx; the boundary cells are half cells, which
    // makes the trapezoidal mass the exactly conserved quantity.
    next[0] = current[0] - dt / (0.5 * dx) * flux[0];
    for (int i = 1; i + 1 < nx; ++i)
      next[i] = current[i] - dt / dx * (flux[i] - flux[i - 1]);
    next[nx - 1] = current[nx - 1] + dt / (0.5 * dx) * flux[nx - 2];

    const double min_val = next.minCoeff();
    if (min_val < -1e-12)
      throw DivergenceError("density went negative (" + std::to_string(min_val) +
                            ") at time step " + std::to_string(n + 1));
    current = next;
    out.mu.row(n + 1) = current.transpose();
    if (std::abs(out.mass(n + 1) - 1.0) > 1e-8)
      throw DivergenceError("density mass drifted at time step " + std::to_string(n + 1));
  }
  return out;
}

DensityGrid solve_fp_forward(const Eigen::VectorXd& mu0,
                             const std::function<double(double t, double x)>& drift,
                             double sigma, const Grid1D& grid) {
  Eigen::MatrixXd b(grid.nt + 1, grid.nx);
  for (int n = 0; n <= grid.nt; ++n)
    for (int i = 0; i < grid.nx; ++i) b(n, i) = drift(grid.time(n), grid.x(i));
  return solve_fp_forward(mu0, b, sigma, grid);
}

DensitySlice::DensitySlice(const Grid1D& grid, Eigen::VectorXd density)
    : grid_(grid), density_(std::move(density)) {}

double DensitySlice::mean() const {
  if (!mean_) {
    const double mass = trapezoid(density_, grid_.dx());
    mean_ = weighted_trapezoid(grid_, density_, [](double x) { return x; }) / mass;
  }
  return *mean_;
}

double DensitySlice::variance() const {
  if (!variance_) {
    const double m1 = mean();
    const double mass = trapezoid(density_, grid_.dx());
    variance_ = weighted_trapezoid(grid_, density_,
                                   [m1](double x) { return (x - m1) * (x - m1); }) /
                mass;
  }
  return *variance_;
}

CoupledSolution solve_coupled_mfg(const CoupledProblem& problem,
                                  const Eigen::VectorXd& mu0, const Grid1D& grid,
                                  double tol, int max_iters, double damping) {
  require(tol > 0.0, "tolerance must be positive");
  require(max_iters >= 1, "need at least one iteration");
  require(damping > 0.0 && damping <= 1.0, "damping must lie in (0, 1]");
  require(static_cast<bool>(problem.coupling), "coupled problem needs a coupling term");

  const auto hjb_for = [&](const Eigen::MatrixXd& density_flow) {
    auto slices = std::make_shared<std::vector<DensitySlice>>();
    slices->reserve(static_cast<std::size_t>(grid.nt + 1));
    for (int n = 0; n <= grid.nt; ++n)
      slices->emplace_back(grid, Eigen::VectorXd(density_flow.row(n)));
    HjbProblem p;
    p.running_xu = problem.running_xu;
    p.terminal = problem.terminal;
    p.drift_xu = problem.drift_xu;
    p.sigma = problem.sigma;
    p.controls = problem.controls;
    p.running_tx = [&problem, &grid, slices](int node, double x) {
      return problem.coupling(grid.time(node), x,
                              (*slices)[static_cast<std::size_t>(node)]);
    };
    return solve_hjb_backward(p, grid);
  };

  // L1 distance between density flows, sup over time nodes.
  const auto residual_of = [&](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    double worst = 0.0;
    for (int n = 0; n <= grid.nt; ++n) {
      const Eigen::VectorXd diff = (a.row(n) - b.row(n)).cwiseAbs();
      double l1 = 0.5 * (diff[0] + diff[grid.nx - 1]);
      for (int i = 1; i + 1 < grid.nx; ++i) l1 += diff[i];
      worst = std::max(worst, l1 * grid.dx());
    }
    return worst;
  };

  CoupledSolution sol;

  // Warm start: decoupled solve against the initial density held constant.
  Eigen::MatrixXd frozen(grid.nt + 1, grid.nx);
  for (int n = 0; n <= grid.nt; ++n) frozen.row(n) = mu0.transpose();
  {
    HjbSolution warm = hjb_for(frozen);
    DensityGrid mu = solve_fp_forward(
        mu0, drift_from_control(warm.control, problem.drift_xu), problem.sigma, grid);
    frozen = mu.mu;
  }

  for (int iter = 0; iter < max_iters; ++iter) {
    HjbSolution hjb = hjb_for(frozen);
    DensityGrid mu_new = solve_fp_forward(
        mu0, drift_from_control(hjb.control, problem.drift_xu), problem.sigma, grid);
    const double res = residual_of(mu_new.mu, frozen);
    sol.history.push_back(res);
    sol.iterations = iter + 1;
    sol.value = std::move(hjb.value);
    sol.control = std::move(hjb.control);
    sol.density = std::move(mu_new);
    if (res <= tol) {
      sol.converged = true;
      break;
    }
    frozen = (1.0 - damping) * frozen + damping * sol.density.mu;
  }
  return sol;
}

LqValue lq_reference(const LqProblem& problem, double t, double x) {
  require(problem.sigma > 0.0, "LQ problem needs sigma > 0");
  require(problem.terminal_weight >= 0.0, "LQ terminal weight must be non-negative");
  require(t <= problem.horizon + 1e-12, "time beyond the horizon");
  const double tau = std::max(0.0, problem.horizon - t);
  double p_val, r_val;
  if (std::abs(problem.terminal_weight - 1.0) <= 1e-14) {
    p_val = 1.0;
    r_val = -0.5 * problem.sigma * problem.sigma * tau;
  } else if (tau == 0.0) {
    p_val = problem.terminal_weight;
    r_val = 0.0;
  } else {
    // RK4 on dP/dtau = 1 - P^2, dr/dtau = -sigma^2 P / 2 from tau = 0.
    const int steps = std::max(1000, static_cast<int>(std::ceil(tau * 4000.0)));
    const double h = tau / static_cast<double>(steps);
    const double half_s2 = 0.5 * problem.sigma * problem.sigma;
    p_val = problem.terminal_weight;
    r_val = 0.0;
    const auto fp = [](double p) { return 1.0 - p * p; };
    for (int i = 0; i < steps; ++i) {
      const double k1 = fp(p_val);
      const double k2 = fp(p_val + 0.5 * h * k1);
      const double k3 = fp(p_val + 0.5 * h * k2);
      const double k4 = fp(p_val + h * k3);
      const double r1 = -half_s2 * p_val;
      const double r2 = -half_s2 * (p_val + 0.5 * h * k1);
      const double r3 = -half_s2 * (p_val + 0.5 * h * k2);
      const double r4 = -half_s2 * (p_val + h * k3);
      p_val += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      r_val += h / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4);
    }
  }
  return {-0.5 * p_val * x * x + r_val, -p_val * x};
}

HjbProblem lq_hjb_problem(const LqProblem& problem, double u_bound, int u_points) {
  HjbProblem p;
  p.running_xu = [](double x, double u) { return -0.5 * (x * x + u * u); };
  p.terminal = [q = problem.terminal_weight](double x) { return -0.5 * q * x * x; };
  p.drift_xu = [](double, double u) { return u; };
  p.sigma = problem.sigma;
  p.controls = ControlSet{-u_bound, u_bound, u_points};
  return p;
}

Eigen::VectorXd gaussian_density(const Grid1D& grid, double mean, double variance) {
  require(variance > 0.0, "gaussian density needs positive variance");
  Eigen::VectorXd mu(grid.nx);
  for (int i = 0; i < grid.nx; ++i) {
    const double z = grid.x(i) - mean;
    mu[i] = std::exp(-0.5 * z * z / variance);
  }
  return mu / trapezoid(mu, grid.dx());
}

}  // namespace mffl
