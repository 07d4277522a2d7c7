#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mffl/common.hpp"

namespace mffl {

// Space-time mesh for the 1-D PDE solvers. nx counts nodes, nt counts steps.
struct Grid1D {
  double x_min = -1.0, x_max = 1.0;
  int nx = 3;
  double t0 = 0.0, horizon = 1.0;
  int nt = 1;

  double dx() const { return (x_max - x_min) / static_cast<double>(nx - 1); }
  double dt() const { return (horizon - t0) / static_cast<double>(nt); }
  double x(int i) const { return x_min + dx() * static_cast<double>(i); }
  double time(int n) const { return t0 + dt() * static_cast<double>(n); }

  static Grid1D make(double x_min, double x_max, int nx, double t0, double horizon,
                     int nt);
  // Chooses the step count from the explicit stability bound.
  static Grid1D stable(double x_min, double x_max, int nx, double t0, double horizon,
                       double sigma, double max_drift);
};

// Explicit-scheme bound: dt <= 0.9 dx^2 / (sigma^2 + dx*max|b| + eps).
double stability_limit(double dx, double sigma, double max_drift);
void check_stability(const Grid1D& grid, double sigma, double max_drift);

// Bounded control interval discretized to a uniform grid for the pointwise
// Hamiltonian sup; argmax ties break to the smallest control.
struct ControlSet {
  double u_min = -1.0, u_max = 1.0;
  int points = 201;

  double u(int j) const {
    return u_min + (u_max - u_min) * static_cast<double>(j) /
                       static_cast<double>(points - 1);
  }
  void validate() const;
};

struct GridValueFunction {
  Grid1D grid;
  Eigen::MatrixXd v;  // (nt+1) x nx, row n = time node n
  std::string boundary_policy = "one-sided-edges";

  double at(int node, double x) const;  // linear interpolation in x
  // Centered-difference views of the slice at one time node (the
  // Hamiltonian inputs z and gamma); one-sided at the edges.
  Eigen::VectorXd slope(int node) const;
  Eigen::VectorXd curvature(int node) const;
};

struct ControlGrid {
  Grid1D grid;
  ControlSet controls;
  Eigen::MatrixXd u;  // (nt+1) x nx

  double at(int node, double x) const;
};

struct DensityGrid {
  Grid1D grid;
  Eigen::MatrixXd mu;  // (nt+1) x nx, non-negative

  double mass(int node) const;      // trapezoidal
  double mean(int node) const;
  double variance(int node) const;
};

// Running reward split into a tabulated (x,u) core and an optional
// u-independent term indexed by time node (the mean-field coupling hook).
struct HjbProblem {
  std::function<double(double x, double u)> running_xu;           // f(x,u)
  std::function<double(int time_node, double x)> running_tx;      // optional
  std::function<double(double x)> terminal;                       // g
  std::function<double(double x, double u)> drift_xu;             // b(x,u)
  double sigma = 0.0;
  ControlSet controls;
};

struct HamiltonianResult {
  double value;
  double control;
};

// sup over the discretized control set of f(x,u) + z b(x,u) + sigma^2 gamma/2.
HamiltonianResult hamiltonian_pointwise(
    double x, double z, double gamma,
    const std::function<double(double, double)>& f,
    const std::function<double(double, double)>& b, double sigma,
    const ControlSet& controls);

struct HjbSolution {
  GridValueFunction value;
  ControlGrid control;
};

// Backward march of dv/dt + H = 0 with terminal data v_T = g, explicit in
// time, centered space differences (one-sided at the edges).
HjbSolution solve_hjb_backward(const HjbProblem& problem, const Grid1D& grid);

// Per-node Hamiltonian argmax from centered differences of v.
ControlGrid control_from_value(const GridValueFunction& v, const HjbProblem& problem);

// Drift values b(x_i, u*(n,i)) on the full grid.
Eigen::MatrixXd drift_from_control(const ControlGrid& control,
                                   const std::function<double(double, double)>& drift_xu);

// Conservative finite-volume forward solve: upwind advection, centered
// diffusion, zero-flux boundaries. Trapezoidal mass is conserved to
// roundoff; the stability bound keeps the update a positive combination.
DensityGrid solve_fp_forward(const Eigen::VectorXd& mu0,
                             const Eigen::MatrixXd& drift_nodes, double sigma,
                             const Grid1D& grid);
DensityGrid solve_fp_forward(const Eigen::VectorXd& mu0,
                             const std::function<double(double t, double x)>& drift,
                             double sigma, const Grid1D& grid);

// Time-t density slice handed to mean-field couplings; summary statistics
// are computed lazily and cached.
class DensitySlice {
 public:
  DensitySlice(const Grid1D& grid, Eigen::VectorXd density);
  double mean() const;
  double variance() const;
  const Eigen::VectorXd& density() const { return density_; }
  const Grid1D& grid() const { return grid_; }

 private:
  Grid1D grid_;
  Eigen::VectorXd density_;
  mutable std::optional<double> mean_;
  mutable std::optional<double> variance_;
};

struct CoupledProblem {
  std::function<double(double x, double u)> running_xu;
  std::function<double(double t, double x, const DensitySlice& mu_t)> coupling;
  std::function<double(double x)> terminal;
  std::function<double(double x, double u)> drift_xu;
  double sigma = 1.0;
  ControlSet controls;
};

struct CoupledSolution {
  GridValueFunction value;
  ControlGrid control;
  DensityGrid density;
  std::vector<double> history;  // sup-over-time L1 density residual per iteration
  bool converged = false;
  int iterations = 0;
};

// Alternates the backward HJB solve (density flow frozen) with the forward
// FP solve (control frozen), damping the density update. Warm-started from
// the decoupled solution, so a mu-independent coupling converges in one
// iteration. Non-convergence is flagged, never thrown.
CoupledSolution solve_coupled_mfg(const CoupledProblem& problem,
                                  const Eigen::VectorXd& mu0, const Grid1D& grid,
                                  double tol, int max_iters, double damping);

// Analytic benchmark: dx = u dt + sigma dW, reward -(x^2+u^2)/2, terminal
// -q_T x^2 / 2. Value -P(t) x^2 / 2 + r(t) with dP/dt = P^2 - 1, P(T) = q_T,
// dr/dt = sigma^2 P / 2, r(T) = 0; optimal control -P(t) x.
struct LqProblem {
  double sigma = 1.0;
  double terminal_weight = 1.0;  // q_T
  double horizon = 1.0;          // T
};

struct LqValue {
  double value;
  double control;
};

LqValue lq_reference(const LqProblem& problem, double t, double x);
HjbProblem lq_hjb_problem(const LqProblem& problem, double u_bound = 5.0,
                          int u_points = 201);

// Normal density sampled on the grid, normalized to trapezoidal mass 1.
Eigen::VectorXd gaussian_density(const Grid1D& grid, double mean, double variance);

}  // namespace mffl
