#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mffl/measures.hpp"

namespace mffl {

// Drift of a McKean-Vlasov dynamic. The state law enters only through its
// time-t marginal, reduced once per grid node to a forcing vector; every
// path then evaluates the drift against that reduction.
struct MeanFieldDrift {
  std::function<Eigen::VectorXd(double t, const EmpiricalMeasure& mu_t)> reduce;
  std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& w,
                                const Eigen::VectorXd& forcing)>
      drift;
};

using StateSampler = std::function<Eigen::VectorXd(Rng& rng)>;

// drift(t, w, mu) = -(Lambda(t) .* grad(w)) - mean of grad over mu's particles;
// the aggregate is the alpha-weighted gradient mean in the p -> inf limit.
MeanFieldDrift federated_meanfield_drift(const TaskSpec& task,
                                         const ControlSchedule& schedule);

// drift(t, w, mu) = -rate * (w - mean(mu)).
MeanFieldDrift mean_reversion_drift(double rate = 1.0);

StateSampler fixed_start(const Eigen::VectorXd& w0);
StateSampler gaussian_start(const Eigen::VectorXd& mean, double stddev);

// Simulates `paths` i.i.d. representative players
//   dw = (-Lambda_t grad(w) - mean(mu_g_t)) dt + sigma dW
// against a frozen gradient flow and returns the empirical state flow.
MeasureFlow representative_dynamics(const Eigen::VectorXd& w0,
                                    const GradientMeasureFlow& gradient_law,
                                    const TaskSpec& task, const ControlSchedule& schedule,
                                    const Eigen::VectorXd& sigma_diag, const TimeGrid& grid,
                                    std::uint64_t seed, int paths, int threads = 1);

struct PicardResult {
  MeasureFlow flow;
  std::vector<double> history;  // flow distance per iteration
  bool converged = false;
  int iterations = 0;
};

// Damped Picard iteration with common random numbers:
//   mu^{n+1} = (1-damping) mu^n + damping * Law(paths simulated against mu^n),
// stopping when the flow distance between successive iterates falls below
// tol. Non-convergence is flagged, not thrown; the distance history is
// always returned.
PicardResult picard_fixed_point(const StateSampler& w0_sampler, const MeanFieldDrift& drift,
                                const Eigen::VectorXd& sigma_diag, const TimeGrid& grid,
                                int paths, double tol, int max_iters, double damping,
                                std::uint64_t seed, int threads = 1);

// Federated specialization: drift from the task and control schedule.
PicardResult picard_fixed_point(const StateSampler& w0_sampler, const TaskSpec& task,
                                const ControlSchedule& schedule,
                                const Eigen::VectorXd& sigma_diag, const TimeGrid& grid,
                                int paths, double tol, int max_iters, double damping,
                                std::uint64_t seed, int threads = 1);

}  // namespace mffl
