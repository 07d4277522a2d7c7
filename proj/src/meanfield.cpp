#include "mffl/meanfield.hpp"

#include <cmath>

namespace mffl {

namespace {
constexpr std::uint64_t kInitStream = 0x696e6974ULL;
constexpr std::uint64_t kPathStream = 0x70617468ULL;
constexpr int kFlowProjections = 16;

// Simulate all paths against a frozen per-node drift and return the state
// flow. Noise and initial draws are keyed by path id, so repeated calls see
// identical randomness (common random numbers).
MeasureFlow simulate_flow(
    const std::vector<Eigen::VectorXd>& starts,
    const std::function<Eigen::VectorXd(int node, double t, const Eigen::VectorXd& w)>& drift,
    const Eigen::VectorXd& sigma_diag, const TimeGrid& grid, std::uint64_t seed,
    int threads) {
  const std::size_t paths = starts.size();
  const auto nodes = static_cast<std::size_t>(grid.nodes());
  std::vector<std::vector<Eigen::VectorXd>> states(paths);
  std::vector<std::exception_ptr> failures(paths);

  const double dt = grid.dt();
  const double sqrt_dt = std::sqrt(dt);
  parallel_for(paths, threads, [&](std::size_t p) {
    try {
      Rng rng(seed, kPathStream, p);
      std::vector<Eigen::VectorXd>& path = states[p];
      path.reserve(nodes);
      Eigen::VectorXd w = starts[p];
      path.push_back(w);
      for (int i = 0; i < grid.steps; ++i) {
        const double t = grid.time(i);
        const Eigen::VectorXd noise = sqrt_dt * rng.gauss_vector(w.size());
        w = euler_maruyama_step(w, drift(i, t, w), sigma_diag, dt, noise);
        path.push_back(w);
      }
    } catch (const DivergenceError& e) {
      failures[p] = std::make_exception_ptr(
          DivergenceError("path " + std::to_string(p) + ": " + e.what()));
    }
  });
  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);

  MeasureFlow flow;
  flow.grid = grid;
  flow.measures.resize(nodes);
  for (std::size_t n = 0; n < nodes; ++n) {
    std::vector<Eigen::VectorXd> slice(paths);
    for (std::size_t p = 0; p < paths; ++p) slice[p] = states[p][n];
    flow.measures[n] = empirical_measure(slice);
  }
  return flow;
}

}  // namespace

MeanFieldDrift federated_meanfield_drift(const TaskSpec& task,
                                         const ControlSchedule& schedule) {
  MeanFieldDrift d;
  d.reduce = [task](double, const EmpiricalMeasure& mu_t) -> Eigen::VectorXd {
    Eigen::VectorXd aggregate = Eigen::VectorXd::Zero(mu_t.dim());
    for (std::size_t i = 0; i < mu_t.size(); ++i)
      aggregate += mu_t.weights[i] * grad(mu_t.particles[i], task);
    return aggregate;
  };
  d.drift = [task, schedule](double t, const Eigen::VectorXd& w,
                             const Eigen::VectorXd& forcing) -> Eigen::VectorXd {
    return -(schedule.at(t).cwiseProduct(grad(w, task)) + forcing);
  };
  return d;
}

MeanFieldDrift mean_reversion_drift(double rate) {
  MeanFieldDrift d;
  d.reduce = [](double, const EmpiricalMeasure& mu_t) { return mu_t.mean(); };
  d.drift = [rate](double, const Eigen::VectorXd& w,
                   const Eigen::VectorXd& forcing) -> Eigen::VectorXd {
    return -rate * (w - forcing);
  };
  return d;
}

StateSampler fixed_start(const Eigen::VectorXd& w0) {
  return [w0](Rng&) { return w0; };
}

StateSampler gaussian_start(const Eigen::VectorXd& mean, double stddev) {
  return [mean, stddev](Rng& rng) -> Eigen::VectorXd {
    return mean + stddev * rng.gauss_vector(mean.size());
  };
}

MeasureFlow representative_dynamics(const Eigen::VectorXd& w0,
                                    const GradientMeasureFlow& gradient_law,
                                    const TaskSpec& task, const ControlSchedule& schedule,
                                    const Eigen::VectorXd& sigma_diag, const TimeGrid& grid,
                                    std::uint64_t seed, int paths, int threads) {
  gradient_law.validate();
  require(gradient_law.grid.nodes() == grid.nodes(),
          "gradient flow grid does not match the integration grid");
  require(paths >= 1, "representative dynamics needs at least one path");
  schedule.validate();

  // Pre-reduce the frozen gradient law to its per-node mean.
  std::vector<Eigen::VectorXd> forcing(static_cast<std::size_t>(grid.nodes()));
  for (int n = 0; n < grid.nodes(); ++n) forcing[static_cast<std::size_t>(n)] =
      gradient_law.at_node(n).mean();

  std::vector<Eigen::VectorXd> starts(static_cast<std::size_t>(paths), w0);
  return simulate_flow(
      starts,
      [&](int node, double t, const Eigen::VectorXd& w) -> Eigen::VectorXd {
        return -(schedule.at(t).cwiseProduct(grad(w, task)) +
                 forcing[static_cast<std::size_t>(node)]);
      },
      sigma_diag, grid, seed, threads);
}

PicardResult picard_fixed_point(const StateSampler& w0_sampler, const MeanFieldDrift& drift,
                                const Eigen::VectorXd& sigma_diag, const TimeGrid& grid,
                                int paths, double tol, int max_iters, double damping,
                                std::uint64_t seed, int threads) {
  require(tol > 0.0, "picard tolerance must be positive");
  require(paths >= 2, "picard needs at least two paths");
  require(max_iters >= 1, "picard needs at least one iteration");
  require(damping > 0.0 && damping <= 1.0, "damping must lie in (0, 1]");

  std::vector<Eigen::VectorXd> starts(static_cast<std::size_t>(paths));
  for (int p = 0; p < paths; ++p) {
    Rng rng(seed, kInitStream, static_cast<std::uint64_t>(p));
    starts[static_cast<std::size_t>(p)] = w0_sampler(rng);
  }

  // Initial guess: the initial empirical measure held constant in time.
  PicardResult result;
  result.flow.grid = grid;
  result.flow.measures.assign(static_cast<std::size_t>(grid.nodes()),
                              empirical_measure(starts));

  for (int iter = 0; iter < max_iters; ++iter) {
    const MeasureFlow& current = result.flow;
    std::vector<Eigen::VectorXd> forcing(static_cast<std::size_t>(grid.nodes()));
    for (int n = 0; n < grid.nodes(); ++n)
      forcing[static_cast<std::size_t>(n)] =
          drift.reduce(grid.time(n), current.at_node(n));
    MeasureFlow next = simulate_flow(
        starts,
        [&](int node, double t, const Eigen::VectorXd& w) {
          return drift.drift(t, w, forcing[static_cast<std::size_t>(node)]);
        },
        sigma_diag, grid, seed, threads);

    if (damping < 1.0) {
      // Particle-wise blend; common random numbers keep particle identities
      // aligned across iterations.
      for (int n = 0; n < grid.nodes(); ++n) {
        auto& dst = next.measures[static_cast<std::size_t>(n)];
        const auto& prev = current.at_node(n);
        for (std::size_t p = 0; p < dst.size(); ++p)
          dst.particles[p] = (1.0 - damping) * prev.particles[p] +
                             damping * dst.particles[p];
      }
    }

    const double dist = flow_distance(next, current, kFlowProjections, seed);
    result.history.push_back(dist);
    result.flow = std::move(next);
    result.iterations = iter + 1;
    if (dist <= tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

PicardResult picard_fixed_point(const StateSampler& w0_sampler, const TaskSpec& task,
                                const ControlSchedule& schedule,
                                const Eigen::VectorXd& sigma_diag, const TimeGrid& grid,
                                int paths, double tol, int max_iters, double damping,
                                std::uint64_t seed, int threads) {
  return picard_fixed_point(w0_sampler, federated_meanfield_drift(task, schedule),
                            sigma_diag, grid, paths, tol, max_iters, damping, seed,
                            threads);
}

}  // namespace mffl
