#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "mffl/task_model.hpp"

namespace mffl {

struct TimeGrid {
  double t0 = 0.0;
  double horizon = 1.0;  // T
  int steps = 1;         // N

  double dt() const { return (horizon - t0) / static_cast<double>(steps); }
  double time(int i) const { return t0 + dt() * static_cast<double>(i); }
  int nodes() const { return steps + 1; }

  static TimeGrid make(double t0, double horizon, int steps);
};

// Piecewise-constant diagonal learning-rate modulation on [t0, T].
// Value i applies on [knots[i], knots[i+1]); the last interval is closed.
struct ControlSchedule {
  std::vector<double> knots;             // size k+1, strictly increasing
  std::vector<Eigen::VectorXd> lambdas;  // size k, length d, in [0, lambda_max]
  double lambda_max = std::numeric_limits<double>::infinity();

  int dim() const { return lambdas.empty() ? 0 : static_cast<int>(lambdas.front().size()); }
  const Eigen::VectorXd& at(double t) const;
  void validate() const;

  static ControlSchedule constant(int dim, double value, double t0, double horizon,
                                  double lambda_max = std::numeric_limits<double>::infinity());
  static ControlSchedule piecewise(std::vector<double> knots,
                                   std::vector<Eigen::VectorXd> lambdas,
                                   double lambda_max = std::numeric_limits<double>::infinity());
};

// Drift law for a single client trajectory. All variants descend the risk.
struct DriftKind {
  enum class Variant { PlainSgd, Controlled, LinearControlled, CoupledFederated };
  Variant variant = Variant::PlainSgd;
  // Controlled: full drift as a user map of (t, gradient, lambda).
  std::function<Eigen::VectorXd(double, const Eigen::VectorXd&, const Eigen::VectorXd&)>
      control_map;

  static DriftKind plain_sgd() { return {Variant::PlainSgd, nullptr}; }
  static DriftKind linear_controlled() { return {Variant::LinearControlled, nullptr}; }
  static DriftKind controlled(
      std::function<Eigen::VectorXd(double, const Eigen::VectorXd&, const Eigen::VectorXd&)> map) {
    return {Variant::Controlled, std::move(map)};
  }
};

struct SdeTrajectory {
  TimeGrid grid;
  std::vector<Eigen::VectorXd> states;  // grid.nodes() entries
  std::uint64_t seed = 0;
  int client_id = 0;

  const Eigen::VectorXd& terminal() const { return states.back(); }
};

// One explicit Euler-Maruyama update: w + drift*dt + sigma .* noise, where
// noise carries N(0, dt) increments.
Eigen::VectorXd euler_maruyama_step(const Eigen::VectorXd& w, const Eigen::VectorXd& drift,
                                    const Eigen::VectorXd& sigma_diag, double dt,
                                    const Eigen::VectorXd& noise);

SdeTrajectory integrate_trajectory(const Eigen::VectorXd& w0, const TaskSpec& task,
                                   const DriftKind& kind, const ControlSchedule& schedule,
                                   const Eigen::VectorXd& sigma_diag, const TimeGrid& grid,
                                   std::uint64_t seed);

enum class NoiseMode { IndependentPerClient, Shared };

struct FederatedClientSpec {
  Eigen::VectorXd w0;
  TaskSpec task;
  ControlSchedule schedule;
};

struct ParticleSystemResult {
  std::vector<SdeTrajectory> clients;
  SdeTrajectory server;  // integrated from the aggregate gradient drift
};

// Interacting system: client k follows
//   dw_k = -(Lambda_k(t) .* g_k + sum_j alpha_j g_j) dt + sigma_k dW_k
// with the aggregate recomputed every step; the server integrates the
// aggregate term alone.
ParticleSystemResult integrate_particle_system(
    const std::vector<FederatedClientSpec>& clients, const MixtureWeights& alpha,
    const std::vector<Eigen::VectorXd>& sigmas, const TimeGrid& grid,
    std::uint64_t seed, NoiseMode mode,
    std::optional<Eigen::VectorXd> server_w0 = std::nullopt);

}  // namespace mffl
