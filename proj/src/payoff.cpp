#include "mffl/payoff.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace mffl {

namespace {
constexpr std::uint64_t kPayoffStream = 0x7061796fULL;
constexpr std::uint64_t kPerturbStream = 0x70657274ULL;

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double std_error_of(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  // Identical samples have zero dispersion; skip the mean-rounding noise.
  bool all_equal = true;
  for (double x : xs) all_equal &= x == xs.front();
  if (all_equal) return 0.0;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1) /
                   static_cast<double>(xs.size()));
}

PayoffEstimate summarize(const std::vector<double>& per_path, std::uint64_t seed) {
  PayoffEstimate e;
  e.paths = static_cast<int>(per_path.size());
  e.seed = seed;
  e.mean = mean_of(per_path);
  e.std_error = std_error_of(per_path, e.mean);
  return e;
}
}  // namespace

CostSpec CostSpec::zero() { return {}; }

CostSpec CostSpec::lq(double terminal_weight) {
  CostSpec c;
  c.running = [](double, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    return -0.5 * (x.squaredNorm() + u.squaredNorm());
  };
  c.terminal = [terminal_weight](const Eigen::VectorXd& x) {
    return -0.5 * terminal_weight * x.squaredNorm();
  };
  return c;
}

CostSpec CostSpec::server_risk(std::vector<TaskSpec> tasks, MixtureWeights alpha) {
  CostSpec c;
  c.running = [tasks = std::move(tasks), alpha = std::move(alpha)](
                  double, const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    return -mixture_risk(x, tasks, alpha);
  };
  return c;
}

CostSpec CostSpec::terminal_only(std::vector<TaskSpec> tasks, MixtureWeights alpha,
                                 double round_cost) {
  CostSpec c;
  c.running = [round_cost](double, const Eigen::VectorXd&, const Eigen::VectorXd&) {
    return -round_cost;
  };
  c.terminal = [tasks = std::move(tasks), alpha = std::move(alpha)](
                   const Eigen::VectorXd& x) { return -mixture_risk(x, tasks, alpha); };
  return c;
}

ControlledDynamics feedback_dynamics(
    std::function<Eigen::VectorXd(double, const Eigen::VectorXd&, const Eigen::VectorXd&)> drift,
    std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)> policy) {
  ControlledDynamics d;
  d.control = std::move(policy);
  d.drift = std::move(drift);
  return d;
}

ControlledDynamics federated_dynamics(const TaskSpec& task, const ControlSchedule& schedule,
                                      const GradientMeasureFlow* gradient_law) {
  schedule.validate();
  ControlledDynamics d;
  d.control = [schedule](double t, const Eigen::VectorXd&) { return schedule.at(t); };
  if (gradient_law) {
    gradient_law->validate();
    std::vector<Eigen::VectorXd> forcing;
    forcing.reserve(gradient_law->measures.size());
    for (const auto& m : gradient_law->measures) forcing.push_back(m.mean());
    const TimeGrid law_grid = gradient_law->grid;
    d.drift = [task, forcing = std::move(forcing), law_grid](
                  double t, const Eigen::VectorXd& x,
                  const Eigen::VectorXd& u) -> Eigen::VectorXd {
      const int node = std::clamp(
          static_cast<int>(std::lround((t - law_grid.t0) / law_grid.dt())), 0,
          law_grid.steps);
      return -(u.cwiseProduct(grad(x, task)) + forcing[static_cast<std::size_t>(node)]);
    };
  } else {
    d.drift = [task](double, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& u) -> Eigen::VectorXd {
      return -u.cwiseProduct(grad(x, task));
    };
  }
  return d;
}

ControlledDynamics grid_policy_dynamics(const ControlGrid& policy,
                                        std::function<double(double, double)> drift_xu) {
  ControlledDynamics d;
  d.control = [policy](double t, const Eigen::VectorXd& x) -> Eigen::VectorXd {
    const Grid1D& g = policy.grid;
    const int node = std::clamp(
        static_cast<int>(std::lround((t - g.t0) / g.dt())), 0, g.nt);
    return Eigen::VectorXd::Constant(1, policy.at(node, x[0]));
  };
  d.drift = [b = std::move(drift_xu)](double, const Eigen::VectorXd& x,
                                      const Eigen::VectorXd& u) -> Eigen::VectorXd {
    return Eigen::VectorXd::Constant(1, b(x[0], u[0]));
  };
  return d;
}

std::vector<double> per_path_payoffs(const Eigen::VectorXd& x0,
                                     const ControlledDynamics& dynamics,
                                     const CostSpec& cost, const Eigen::VectorXd& sigma_diag,
                                     const TimeGrid& grid, int paths, std::uint64_t seed,
                                     int threads) {
  require(paths >= 2, "payoff estimation needs at least two paths");
  require(static_cast<bool>(dynamics.drift), "dynamics needs a drift");
  const double dt = grid.dt();
  const double sqrt_dt = std::sqrt(dt);
  const Eigen::VectorXd no_control;

  std::vector<double> payoffs(static_cast<std::size_t>(paths));
  std::vector<std::exception_ptr> failures(payoffs.size());
  parallel_for(payoffs.size(), threads, [&](std::size_t p) {
    try {
      Rng rng(seed, kPayoffStream, p);
      Eigen::VectorXd x = x0;
      double running = 0.0;
      double prev_f = 0.0;
      const auto eval_f = [&](double t, const Eigen::VectorXd& state,
                              const Eigen::VectorXd& u) {
        return cost.running ? cost.running(t, state, u) : 0.0;
      };
      Eigen::VectorXd u = dynamics.control ? dynamics.control(grid.t0, x) : no_control;
      prev_f = eval_f(grid.t0, x, u);
      for (int i = 0; i < grid.steps; ++i) {
        const double t = grid.time(i);
        const Eigen::VectorXd drift = dynamics.drift(t, x, u);
        const Eigen::VectorXd noise = sqrt_dt * rng.gauss_vector(x.size());
        x = euler_maruyama_step(x, drift, sigma_diag, dt, noise);
        const double t_next = grid.time(i + 1);
        u = dynamics.control ? dynamics.control(t_next, x) : no_control;
        const double f = eval_f(t_next, x, u);
        running += 0.5 * dt * (prev_f + f);
        prev_f = f;
      }
      payoffs[p] = running + (cost.terminal ? cost.terminal(x) : 0.0);
    } catch (const DivergenceError& e) {
      failures[p] = std::make_exception_ptr(
          DivergenceError("path " + std::to_string(p) + ": " + e.what()));
    }
  });
  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);
  return payoffs;
}

PayoffEstimate estimate_payoff(const Eigen::VectorXd& x0, const ControlledDynamics& dynamics,
                               const CostSpec& cost, const Eigen::VectorXd& sigma_diag,
                               const TimeGrid& grid, int paths, std::uint64_t seed,
                               int threads) {
  return summarize(
      per_path_payoffs(x0, dynamics, cost, sigma_diag, grid, paths, seed, threads), seed);
}

Perturbation Perturbation::none(int dim, double t0, double horizon) {
  Perturbation p;
  p.kind = PerturbKind::ConstantOffset;
  p.delta.knots = {t0, horizon};
  p.delta.lambdas = {Eigen::VectorXd::Zero(dim)};
  return p;
}

std::vector<Perturbation> random_perturbations(const TimeGrid& grid, int dim, int count,
                                               double bound, std::uint64_t seed) {
  require(count >= 1, "need at least one perturbation");
  require(bound > 0.0, "perturbation bound must be positive");
  std::vector<Perturbation> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    Rng rng(seed, kPerturbStream, static_cast<std::uint64_t>(k));
    Perturbation p;
    p.kind = static_cast<PerturbKind>(k % 3);
    switch (p.kind) {
      case PerturbKind::ConstantOffset: {
        Eigen::VectorXd v(dim);
        for (int i = 0; i < dim; ++i) v[i] = rng.uniform(-bound, bound);
        p.delta.knots = {grid.t0, grid.horizon};
        p.delta.lambdas = {v};
        break;
      }
      case PerturbKind::IntervalBump: {
        const double span = grid.horizon - grid.t0;
        double a = rng.uniform(grid.t0, grid.horizon);
        double b = rng.uniform(grid.t0, grid.horizon);
        if (a > b) std::swap(a, b);
        a = std::min(a, grid.horizon - 0.01 * span);
        b = std::min(std::max(b, a + 0.01 * span), grid.horizon);
        Eigen::VectorXd v(dim);
        for (int i = 0; i < dim; ++i) v[i] = rng.uniform(-bound, bound);
        p.delta.knots = {grid.t0};
        p.delta.lambdas = {};
        if (a > grid.t0) {
          p.delta.lambdas.push_back(Eigen::VectorXd::Zero(dim));
          p.delta.knots.push_back(a);
        }
        p.delta.lambdas.push_back(v);
        if (b < grid.horizon) {
          p.delta.knots.push_back(b);
          p.delta.lambdas.push_back(Eigen::VectorXd::Zero(dim));
        }
        p.delta.knots.push_back(grid.horizon);
        break;
      }
      case PerturbKind::Scale: {
        Eigen::VectorXd v(dim);
        for (int i = 0; i < dim; ++i)
          v[i] = std::max(0.0, 1.0 + rng.uniform(-bound, bound));
        p.delta.knots = {grid.t0, grid.horizon};
        p.delta.lambdas = {v};
        break;
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

ControlSchedule perturb_schedule(const ControlSchedule& base, const Perturbation& pert) {
  base.validate();
  std::set<double> knot_set(base.knots.begin(), base.knots.end());
  knot_set.insert(pert.delta.knots.begin(), pert.delta.knots.end());
  ControlSchedule out;
  out.lambda_max = base.lambda_max;
  out.knots.assign(knot_set.begin(), knot_set.end());
  // Keep only knots inside the base span.
  std::erase_if(out.knots, [&](double t) {
    return t < base.knots.front() - 1e-15 || t > base.knots.back() + 1e-15;
  });
  for (std::size_t i = 0; i + 1 < out.knots.size(); ++i) {
    const double mid = 0.5 * (out.knots[i] + out.knots[i + 1]);
    const Eigen::VectorXd& b = base.at(mid);
    const Eigen::VectorXd& d = pert.delta.at(mid);
    Eigen::VectorXd v = (pert.kind == PerturbKind::Scale) ? Eigen::VectorXd(b.cwiseProduct(d))
                                                          : Eigen::VectorXd(b + d);
    for (int j = 0; j < v.size(); ++j)
      v[j] = std::clamp(v[j], 0.0, base.lambda_max);
    out.lambdas.push_back(std::move(v));
  }
  out.validate();
  return out;
}

std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)> perturb_policy_1d(
    std::function<double(double t, double x)> base, const Perturbation& pert, double lo,
    double hi) {
  return [base = std::move(base), pert, lo, hi](
             double t, const Eigen::VectorXd& x) -> Eigen::VectorXd {
    const double b = base(t, x[0]);
    const double d = pert.delta.at(t)[0];
    const double u = (pert.kind == PerturbKind::Scale) ? b * d : b + d;
    return Eigen::VectorXd::Constant(1, std::clamp(u, lo, hi));
  };
}

DeviationReport nash_deviation_gap(
    const std::function<ControlledDynamics(const Perturbation&)>& dynamics_for,
    const std::vector<Perturbation>& perturbations, const CostSpec& cost,
    const Eigen::VectorXd& x0, const Eigen::VectorXd& sigma_diag, const TimeGrid& grid,
    int paths, std::uint64_t seed, int threads) {
  DeviationReport report;
  const int dim = perturbations.empty() ? static_cast<int>(sigma_diag.size())
                                        : perturbations.front().delta.dim();
  const Perturbation identity = Perturbation::none(dim, grid.t0, grid.horizon);
  const std::vector<double> base = per_path_payoffs(
      x0, dynamics_for(identity), cost, sigma_diag, grid, paths, seed, threads);
  report.baseline = summarize(base, seed);

  for (const auto& pert : perturbations) {
    const std::vector<double> dev = per_path_payoffs(
        x0, dynamics_for(pert), cost, sigma_diag, grid, paths, seed, threads);
    report.perturbed.push_back(summarize(dev, seed));
    std::vector<double> diff(dev.size());
    for (std::size_t i = 0; i < dev.size(); ++i) diff[i] = dev[i] - base[i];
    const double gap = mean_of(diff);
    report.gaps.push_back(gap);
    report.gap_std_errors.push_back(std_error_of(diff, gap));
  }
  return report;
}

VerificationResult verification_check(const GridValueFunction& v, const ControlGrid& policy,
                                      const HjbProblem& problem, double x0,
                                      const TimeGrid& mc_grid, int paths,
                                      std::uint64_t seed, double allowance,
                                      int threads) {
  require(allowance >= 0.0, "allowance must be non-negative");
  CostSpec cost;
  const Grid1D pde_grid = v.grid;
  cost.running = [&problem, pde_grid](double t, const Eigen::VectorXd& x,
                                      const Eigen::VectorXd& u) {
    double f = problem.running_xu(x[0], u[0]);
    if (problem.running_tx) {
      const int node = std::clamp(
          static_cast<int>(std::lround((t - pde_grid.t0) / pde_grid.dt())), 0,
          pde_grid.nt);
      f += problem.running_tx(node, x[0]);
    }
    return f;
  };
  cost.terminal = [&problem](const Eigen::VectorXd& x) { return problem.terminal(x[0]); };

  const ControlledDynamics dynamics = grid_policy_dynamics(policy, problem.drift_xu);
  VerificationResult result;
  result.allowance = allowance;
  result.estimate =
      estimate_payoff(Eigen::VectorXd::Constant(1, x0), dynamics, cost,
                      Eigen::VectorXd::Constant(1, problem.sigma), mc_grid, paths, seed,
                      threads);
  result.value_at_x0 = v.at(0, x0);
  result.agrees = std::abs(result.value_at_x0 - result.estimate.mean) <=
                  4.0 * result.estimate.std_error + allowance;
  return result;
}

}  // namespace mffl
