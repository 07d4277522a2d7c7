#include "mffl/sde.hpp"

#include <algorithm>
#include <cmath>

#include "mffl/rng.hpp"

namespace mffl {

namespace {
constexpr std::uint64_t kNoiseStream = 0x6e6f6973ULL;
}

TimeGrid TimeGrid::make(double t0, double horizon, int steps) {
  require(horizon > t0, "time grid needs T > t0");
  require(steps >= 1, "time grid needs at least one step");
  return TimeGrid{t0, horizon, steps};
}

const Eigen::VectorXd& ControlSchedule::at(double t) const {
  // Last interval with start <= t; t past the end clamps to the final value.
  const auto it = std::upper_bound(knots.begin(), knots.end() - 1, t);
  const auto idx = static_cast<std::size_t>(std::max<std::ptrdiff_t>(
      0, std::distance(knots.begin(), it) - 1));
  return lambdas[std::min(idx, lambdas.size() - 1)];
}

void ControlSchedule::validate() const {
  require(knots.size() >= 2, "schedule needs at least one interval");
  require(lambdas.size() + 1 == knots.size(), "schedule knot/value count mismatch");
  for (std::size_t i = 1; i < knots.size(); ++i)
    require(knots[i] > knots[i - 1], "schedule breakpoints must be strictly increasing");
  const int d = dim();
  for (const auto& lam : lambdas) {
    require(lam.size() == d, "schedule values must share one dimension");
    require(lam.minCoeff() >= 0.0, "schedule values must be non-negative");
    require(lam.maxCoeff() <= lambda_max, "schedule value exceeds lambda_max");
  }
}

ControlSchedule ControlSchedule::constant(int dim, double value, double t0,
                                          double horizon, double lambda_max) {
  ControlSchedule s;
  s.knots = {t0, horizon};
  s.lambdas = {Eigen::VectorXd::Constant(dim, value)};
  s.lambda_max = lambda_max;
  s.validate();
  return s;
}

ControlSchedule ControlSchedule::piecewise(std::vector<double> knots,
                                           std::vector<Eigen::VectorXd> lambdas,
                                           double lambda_max) {
  ControlSchedule s;
  s.knots = std::move(knots);
  s.lambdas = std::move(lambdas);
  s.lambda_max = lambda_max;
  s.validate();
  return s;
}

Eigen::VectorXd euler_maruyama_step(const Eigen::VectorXd& w, const Eigen::VectorXd& drift,
                                    const Eigen::VectorXd& sigma_diag, double dt,
                                    const Eigen::VectorXd& noise) {
  require(dt > 0.0, "step size must be positive");
  require(drift.size() == w.size() && sigma_diag.size() == w.size() &&
              noise.size() == w.size(),
          "euler_maruyama_step dimension mismatch");
  Eigen::VectorXd next = w + drift * dt + sigma_diag.cwiseProduct(noise);
  if (!all_finite(next)) throw DivergenceError("euler_maruyama_step diverged");
  return next;
}

SdeTrajectory integrate_trajectory(const Eigen::VectorXd& w0, const TaskSpec& task,
                                   const DriftKind& kind, const ControlSchedule& schedule,
                                   const Eigen::VectorXd& sigma_diag, const TimeGrid& grid,
                                   std::uint64_t seed) {
  require(kind.variant != DriftKind::Variant::CoupledFederated,
          "coupled dynamics require integrate_particle_system");
  schedule.validate();
  require(schedule.knots.front() <= grid.t0 + 1e-12 &&
              schedule.knots.back() >= grid.horizon - 1e-12,
          "schedule must cover the time grid");
  require(w0.size() == task.dim(), "initial weights do not match task dimension");

  SdeTrajectory traj;
  traj.grid = grid;
  traj.seed = seed;
  traj.states.reserve(static_cast<std::size_t>(grid.nodes()));
  traj.states.push_back(w0);

  const double dt = grid.dt();
  const double sqrt_dt = std::sqrt(dt);
  Rng rng(seed, kNoiseStream);
  Eigen::VectorXd w = w0;
  for (int i = 0; i < grid.steps; ++i) {
    const double t = grid.time(i);
    const Eigen::VectorXd g = grad(w, task);
    Eigen::VectorXd drift;
    switch (kind.variant) {
      case DriftKind::Variant::PlainSgd:
        drift = -g;
        break;
      case DriftKind::Variant::LinearControlled:
        drift = -schedule.at(t).cwiseProduct(g);
        break;
      case DriftKind::Variant::Controlled:
        drift = kind.control_map(t, g, schedule.at(t));
        break;
      default:
        drift = -g;
    }
    const Eigen::VectorXd noise = sqrt_dt * rng.gauss_vector(w.size());
    try {
      w = euler_maruyama_step(w, drift, sigma_diag, dt, noise);
    } catch (const DivergenceError&) {
      throw DivergenceError("trajectory diverged at step " + std::to_string(i));
    }
    traj.states.push_back(w);
  }
  return traj;
}

ParticleSystemResult integrate_particle_system(
    const std::vector<FederatedClientSpec>& clients, const MixtureWeights& alpha,
    const std::vector<Eigen::VectorXd>& sigmas, const TimeGrid& grid,
    std::uint64_t seed, NoiseMode mode, std::optional<Eigen::VectorXd> server_w0) {
  const std::size_t p = clients.size();
  require(p >= 1, "particle system needs at least one client");
  require(alpha.size() == p, "mixture weight/client count mismatch");
  require(sigmas.size() == p, "diffusion count must match client count");
  const Eigen::Index d = clients.front().w0.size();
  for (const auto& c : clients) {
    c.schedule.validate();
    require(c.w0.size() == d, "clients must share the weight dimension");
    require(c.task.dim() == d, "client task dimension mismatch");
  }

  ParticleSystemResult out;
  out.clients.resize(p);
  std::vector<Eigen::VectorXd> w(p);
  for (std::size_t k = 0; k < p; ++k) {
    out.clients[k].grid = grid;
    out.clients[k].seed = seed;
    out.clients[k].client_id = static_cast<int>(k);
    out.clients[k].states.reserve(static_cast<std::size_t>(grid.nodes()));
    out.clients[k].states.push_back(clients[k].w0);
    w[k] = clients[k].w0;
  }

  Eigen::VectorXd server = server_w0.value_or([&] {
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(d);
    for (std::size_t k = 0; k < p; ++k) avg += alpha[k] * clients[k].w0;
    return avg;
  }());
  require(server.size() == d, "server initial weights dimension mismatch");
  out.server.grid = grid;
  out.server.seed = seed;
  out.server.client_id = -1;
  out.server.states.push_back(server);

  std::vector<Rng> streams;
  streams.reserve(mode == NoiseMode::Shared ? 1 : p);
  if (mode == NoiseMode::Shared) {
    streams.emplace_back(seed, kNoiseStream);
  } else {
    for (std::size_t k = 0; k < p; ++k)
      streams.emplace_back(seed, kNoiseStream, static_cast<std::uint64_t>(k));
  }

  const double dt = grid.dt();
  const double sqrt_dt = std::sqrt(dt);
  std::vector<Eigen::VectorXd> grads(p);
  for (int i = 0; i < grid.steps; ++i) {
    const double t = grid.time(i);
    Eigen::VectorXd aggregate = Eigen::VectorXd::Zero(d);
    for (std::size_t k = 0; k < p; ++k) {
      grads[k] = grad(w[k], clients[k].task);
      aggregate += alpha[k] * grads[k];
    }
    Eigen::VectorXd shared_noise;
    if (mode == NoiseMode::Shared) shared_noise = sqrt_dt * streams[0].gauss_vector(d);
    for (std::size_t k = 0; k < p; ++k) {
      const Eigen::VectorXd drift =
          -(clients[k].schedule.at(t).cwiseProduct(grads[k]) + aggregate);
      const Eigen::VectorXd noise = (mode == NoiseMode::Shared)
                                        ? shared_noise
                                        : sqrt_dt * streams[k].gauss_vector(d);
      try {
        w[k] = euler_maruyama_step(w[k], drift, sigmas[k], dt, noise);
      } catch (const DivergenceError&) {
        throw DivergenceError("client " + std::to_string(k) + " diverged at step " +
                              std::to_string(i));
      }
      out.clients[k].states.push_back(w[k]);
    }
    server -= aggregate * dt;
    if (!all_finite(server))
      throw DivergenceError("server trajectory diverged at step " + std::to_string(i));
    out.server.states.push_back(server);
  }
  return out;
}

}  // namespace mffl
