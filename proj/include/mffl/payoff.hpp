#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mffl/hjb_fp.hpp"
#include "mffl/measures.hpp"

namespace mffl {

// Maximization-oriented objective: payoff = integral of running dt +
// terminal at T. Cost-style problems are negated by the factories.
struct CostSpec {
  std::function<double(double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u)>
      running;  // null = 0
  std::function<double(const Eigen::VectorXd& x)> terminal;  // null = 0

  static CostSpec zero();
  // reward -(x^2 + u^2)/2 with terminal -q_T x^2 / 2 (scalar state).
  static CostSpec lq(double terminal_weight = 1.0);
  // running reward = -mixture risk of the state; no terminal term.
  static CostSpec server_risk(std::vector<TaskSpec> tasks, MixtureWeights alpha);
  // g = -mixture risk at T, running = -c (the per-round price of training).
  static CostSpec terminal_only(std::vector<TaskSpec> tasks, MixtureWeights alpha,
                                double round_cost);
};

// Controlled SDE: the policy (and any frozen measure flow) is bound inside.
struct ControlledDynamics {
  std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x)> control;
  std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& u)>
      drift;
};

ControlledDynamics feedback_dynamics(
    std::function<Eigen::VectorXd(double, const Eigen::VectorXd&, const Eigen::VectorXd&)> drift,
    std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)> policy);

// Representative federated dynamics against a frozen gradient law (pass
// nullptr for the no-mean-field case): dw = (-Lambda g(w) - mean mu_g) dt.
ControlledDynamics federated_dynamics(const TaskSpec& task, const ControlSchedule& schedule,
                                      const GradientMeasureFlow* gradient_law);

// Scalar feedback policy read off a solver control grid (nearest time node,
// linear in x) with drift b(x, u).
ControlledDynamics grid_policy_dynamics(const ControlGrid& policy,
                                        std::function<double(double, double)> drift_xu);

struct PayoffEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  int paths = 0;
  std::uint64_t seed = 0;
};

// Monte-Carlo estimate of E[int f dt + g] over trajectories from x0; the
// running term uses the trapezoidal rule along each path. Randomness is
// keyed by (seed, path), so estimates are reproducible at any thread count.
PayoffEstimate estimate_payoff(const Eigen::VectorXd& x0, const ControlledDynamics& dynamics,
                               const CostSpec& cost, const Eigen::VectorXd& sigma_diag,
                               const TimeGrid& grid, int paths, std::uint64_t seed,
                               int threads = 1);

// Per-path payoffs with the same stream keying (used for CRN differences).
std::vector<double> per_path_payoffs(const Eigen::VectorXd& x0,
                                     const ControlledDynamics& dynamics,
                                     const CostSpec& cost, const Eigen::VectorXd& sigma_diag,
                                     const TimeGrid& grid, int paths, std::uint64_t seed,
                                     int threads = 1);

enum class PerturbKind { ConstantOffset, IntervalBump, Scale };

// A strategy deviation: a piecewise-constant delta applied to the baseline
// control (added, or multiplied for Scale), clipped to the admissible set.
struct Perturbation {
  PerturbKind kind = PerturbKind::ConstantOffset;
  ControlSchedule delta;

  static Perturbation none(int dim, double t0, double horizon);
};

// Cycles through the three families; values lie in [-bound, bound]
// (Scale multipliers in [1-bound, 1+bound] floored at 0).
std::vector<Perturbation> random_perturbations(const TimeGrid& grid, int dim, int count,
                                               double bound, std::uint64_t seed);

// Perturbed schedule, clamped to [0, lambda_max].
ControlSchedule perturb_schedule(const ControlSchedule& base, const Perturbation& pert);

// Perturbed scalar feedback policy, clamped to [lo, hi].
std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)> perturb_policy_1d(
    std::function<double(double t, double x)> base, const Perturbation& pert, double lo,
    double hi);

struct DeviationReport {
  PayoffEstimate baseline;
  std::vector<PayoffEstimate> perturbed;
  std::vector<double> gaps;            // perturbed - baseline
  std::vector<double> gap_std_errors;  // stderr of the per-path differences
};

// Deviation payoffs against the frozen equilibrium environment: the same
// noise streams drive every estimate, and the measure flow inside the
// dynamics is never re-solved for deviators.
DeviationReport nash_deviation_gap(
    const std::function<ControlledDynamics(const Perturbation&)>& dynamics_for,
    const std::vector<Perturbation>& perturbations, const CostSpec& cost,
    const Eigen::VectorXd& x0, const Eigen::VectorXd& sigma_diag, const TimeGrid& grid,
    int paths, std::uint64_t seed, int threads = 1);

struct VerificationResult {
  double value_at_x0 = 0.0;
  PayoffEstimate estimate;
  bool agrees = false;
  double allowance = 0.0;
};

// Simulates the supplied policy and checks the Monte-Carlo payoff against
// v(0, x0) within 4 standard errors plus a grid-error allowance.
VerificationResult verification_check(const GridValueFunction& v, const ControlGrid& policy,
                                      const HjbProblem& problem, double x0,
                                      const TimeGrid& mc_grid, int paths,
                                      std::uint64_t seed, double allowance,
                                      int threads = 1);

}  // namespace mffl
