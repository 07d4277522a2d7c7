#include "mffl/scenarios.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <json.hpp>

#include "mffl/csv.hpp"
#include "mffl/federated.hpp"
#include "mffl/hjb_fp.hpp"
#include "mffl/meanfield.hpp"
#include "mffl/measures.hpp"
#include "mffl/payoff.hpp"
#include "mffl/rng.hpp"
#include "mffl/sde.hpp"
#include "mffl/task_model.hpp"

namespace mffl {

namespace {

using nlohmann::json;

constexpr std::uint64_t kTaskStream = 0x7461736bULL;

struct ScenarioContext {
  ConfigReader reader;
  std::filesystem::path out;
  std::uint64_t seed = 0;
  int threads = 1;
  RunManifest manifest;
  json metrics = json::object();

  explicit ScenarioContext(ParsedConfig cfg) : reader(std::move(cfg)) {}

  std::filesystem::path artifact(const std::string& name) {
    manifest.files.push_back(name);
    return out / name;
  }

  void check(const std::string& name, bool pass, const std::string& detail) {
    manifest.checks.push_back({name, pass, detail});
  }
};

// ---------------------------------------------------------------------------
// shared config fragments

struct TaskSet {
  std::vector<TaskSpec> tasks;
  std::vector<int> counts;
  int dim = 1;
};

TaskSet read_tasks(ScenarioContext& ctx) {
  auto& r = ctx.reader;
  const std::string mode = r.str("tasks", "mode", "random-quadratic");
  const auto task_seed =
      static_cast<std::uint64_t>(r.integer("tasks", "seed", static_cast<std::int64_t>(ctx.seed)));
  TaskSet set;
  if (mode == "random-quadratic") {
    const int count = static_cast<int>(r.integer("tasks", "count"));
    const int dim = static_cast<int>(r.integer("tasks", "dim", 1));
    const double center_scale = r.number("tasks", "center_scale", 1.0);
    const double curv_min = r.number("tasks", "curvature_min", 1.0);
    const double curv_max = r.number("tasks", "curvature_max", curv_min);
    const int samples = static_cast<int>(r.integer("tasks", "sample_count", 50));
    require(count >= 1 && dim >= 1, "tasks.count and tasks.dim must be positive");
    require(curv_max >= curv_min && curv_min > 0.0, "invalid curvature range");
    for (int k = 0; k < count; ++k) {
      Rng rng(task_seed, kTaskStream, static_cast<std::uint64_t>(k));
      Eigen::VectorXd center = center_scale * rng.gauss_vector(dim);
      Eigen::VectorXd diag(dim);
      for (int i = 0; i < dim; ++i) diag[i] = rng.uniform(curv_min, curv_max);
      set.tasks.push_back(TaskSpec::quadratic(center, diag.asDiagonal()));
      set.counts.push_back(samples);
    }
    set.dim = dim;
  } else if (mode == "explicit-quadratic") {
    const int dim = static_cast<int>(r.integer("tasks", "dim", 1));
    const std::vector<double> centers = r.numbers("tasks", "centers");
    const std::vector<double> curvatures = r.numbers("tasks", "curvatures");
    require(dim >= 1, "tasks.dim must be positive");
    require(centers.size() % static_cast<std::size_t>(dim) == 0,
            "tasks.centers length must be a multiple of dim");
    require(curvatures.size() == centers.size(),
            "tasks.curvatures must match tasks.centers");
    const auto count = centers.size() / static_cast<std::size_t>(dim);
    const std::vector<double> counts = r.numbers(
        "tasks", "sample_counts",
        std::vector<double>(count, r.number("tasks", "sample_count", 50.0)));
    require(counts.size() == count, "tasks.sample_counts must match the task count");
    for (std::size_t k = 0; k < count; ++k) {
      Eigen::VectorXd center(dim), diag(dim);
      for (int i = 0; i < dim; ++i) {
        center[i] = centers[k * dim + i];
        diag[i] = curvatures[k * dim + i];
      }
      set.tasks.push_back(TaskSpec::quadratic(center, diag.asDiagonal()));
      set.counts.push_back(static_cast<int>(counts[k]));
    }
    set.dim = dim;
  } else if (mode == "logistic") {
    const int count = static_cast<int>(r.integer("tasks", "count"));
    const int feature_dim = static_cast<int>(r.integer("tasks", "feature_dim", 2));
    const int class_count = static_cast<int>(r.integer("tasks", "class_count", 2));
    const double separation = r.number("tasks", "separation", 2.0);
    const double variance = r.number("tasks", "variance", 1.0);
    const int samples = static_cast<int>(r.integer("tasks", "sample_count", 50));
    require(count >= 1 && feature_dim >= 1 && class_count >= 2, "invalid logistic tasks");
    for (int k = 0; k < count; ++k) {
      std::vector<GaussianClass> classes;
      for (int c = 0; c < class_count; ++c) {
        GaussianClass g;
        g.mean = Eigen::VectorXd::Zero(feature_dim);
        g.mean[c % feature_dim] = (c % 2 == 0 ? 1.0 : -1.0) * separation;
        g.cov = variance * Eigen::MatrixXd::Identity(feature_dim, feature_dim);
        classes.push_back(std::move(g));
      }
      set.tasks.push_back(TaskSpec::logistic(
          std::move(classes), samples, mix64(task_seed, kTaskStream, static_cast<std::uint64_t>(k))));
      set.counts.push_back(samples);
    }
    set.dim = set.tasks.front().dim();
  } else {
    require(false, "unknown tasks.mode '" + mode + "'");
  }
  return set;
}

FedConfig read_fed(ScenarioContext& ctx) {
  auto& r = ctx.reader;
  FedConfig cfg;
  cfg.client_fraction = r.number("fed", "client_fraction", 1.0);
  cfg.local_epochs = static_cast<int>(r.integer("fed", "local_epochs", 1));
  if (r.has("fed", "batch_size"))
    cfg.batch_size = static_cast<int>(r.integer("fed", "batch_size"));
  cfg.learning_rate = r.number("fed", "learning_rate");
  cfg.rounds = static_cast<int>(r.integer("fed", "rounds"));
  const std::string weighting = r.str("fed", "weighting", "sample-proportional");
  if (weighting == "sample-proportional") {
    cfg.weighting = Weighting::SampleProportional;
  } else if (weighting == "uniform") {
    cfg.weighting = Weighting::Uniform;
  } else {
    require(false, "fed.weighting must be 'sample-proportional' or 'uniform'");
  }
  if (r.has("fed", "stop_risk")) cfg.stop_risk = r.number("fed", "stop_risk");
  cfg.seed = ctx.seed;
  cfg.threads = ctx.threads;
  return cfg;
}

WeightVector read_init(ScenarioContext& ctx, int dim) {
  auto& r = ctx.reader;
  if (r.has("init", "w0")) {
    const std::vector<double> w0 = r.numbers("init", "w0");
    if (w0.size() == 1)
      return WeightVector::Constant(dim, w0.front());
    require(w0.size() == static_cast<std::size_t>(dim),
            "init.w0 length must equal the weight dimension");
    return Eigen::Map<const Eigen::VectorXd>(w0.data(), dim);
  }
  return WeightVector::Zero(dim);
}

void write_matrix_csv(ScenarioContext& ctx, const std::string& name,
                      const Eigen::MatrixXd& m) {
  std::ofstream out(ctx.artifact(name));
  require(out.good(), "cannot open " + name);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << g17(m(i, j));
    }
    out << '\n';
  }
}

void write_grid_meta(ScenarioContext& ctx, const std::string& name, const Grid1D& grid,
                     const json& extra = json::object()) {
  json meta = extra;
  meta["x_min"] = grid.x_min;
  meta["x_max"] = grid.x_max;
  meta["nx"] = grid.nx;
  meta["t0"] = grid.t0;
  meta["horizon"] = grid.horizon;
  meta["nt"] = grid.nt;
  meta["rows"] = "time nodes";
  meta["cols"] = "space nodes";
  std::ofstream out(ctx.artifact(name));
  out << meta.dump(2) << '\n';
}

std::string join_ids(const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(ids[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// scenarios

void run_fedavg_baseline(ScenarioContext& ctx) {
  TaskSet set = read_tasks(ctx);
  FedConfig fed = read_fed(ctx);
  const WeightVector w0 = read_init(ctx, set.dim);
  const double gap_tol = ctx.reader.number("checks", "final_gap_tol", 1e-8);
  ctx.reader.finish();

  const MixtureWeights alpha = MixtureWeights::sample_proportional(set.counts);
  std::vector<ClientState> clients;
  for (std::size_t k = 0; k < set.tasks.size(); ++k)
    clients.push_back({w0, set.tasks[k], set.counts[k]});

  const std::vector<RoundLog> logs =
      run_federated(clients, w0, fed, FedAlgorithm::FedAvg, alpha);

  CsvWriter rounds(ctx.artifact("rounds.csv"), {"round", "risk", "selected"});
  for (const auto& log : logs) rounds.row(log.round, log.server_risk, join_ids(log.selected));

  double optimum_risk = std::numeric_limits<double>::quiet_NaN();
  bool all_quadratic = true;
  for (const auto& t : set.tasks) all_quadratic &= t.family == TaskFamily::Quadratic;
  if (all_quadratic)
    optimum_risk = mixture_risk(mixture_optimum(set.tasks, alpha), set.tasks, alpha);

  const double final_risk = logs.back().server_risk;
  ctx.metrics["rounds_run"] = logs.size();
  ctx.metrics["final_risk"] = final_risk;
  if (all_quadratic) {
    ctx.metrics["optimum_risk"] = optimum_risk;
    ctx.metrics["final_gap"] = final_risk - optimum_risk;
    ctx.check("final_gap_within_tol", final_risk - optimum_risk <= gap_tol,
              "gap " + g17(final_risk - optimum_risk) + " vs tol " + g17(gap_tol));
  }
}

void run_fedsgd_equivalence(ScenarioContext& ctx) {
  auto& r = ctx.reader;
  const int instances = static_cast<int>(r.integer("equivalence", "instances", 100));
  const int count = static_cast<int>(r.integer("tasks", "count", 5));
  const int dim = static_cast<int>(r.integer("tasks", "dim", 3));
  const double eta = r.number("fed", "learning_rate", 0.1);
  const int rounds = static_cast<int>(r.integer("fed", "rounds", 50));
  r.finish();

  // FedSGD vs one centralized gradient step on the mixture risk.
  CsvWriter inst_csv(ctx.artifact("fedsgd_vs_centralized.csv"),
                     {"instance", "max_abs_deviation"});
  double worst_instance = 0.0;
  for (int inst = 0; inst < instances; ++inst) {
    Rng rng(ctx.seed, kTaskStream, static_cast<std::uint64_t>(inst));
    std::vector<ClientState> clients;
    std::vector<TaskSpec> tasks;
    std::vector<int> counts;
    for (int k = 0; k < count; ++k) {
      Eigen::VectorXd center = rng.gauss_vector(dim);
      Eigen::VectorXd diag(dim);
      for (int i = 0; i < dim; ++i) diag[i] = rng.uniform(0.5, 2.0);
      tasks.push_back(TaskSpec::quadratic(center, diag.asDiagonal()));
      counts.push_back(1 + static_cast<int>(rng.index(100)));
    }
    const MixtureWeights alpha = MixtureWeights::sample_proportional(counts);
    const WeightVector w = rng.gauss_vector(dim);
    for (int k = 0; k < count; ++k) clients.push_back({w, tasks[k], counts[k]});
    FedConfig fed;
    fed.learning_rate = eta;
    fed.seed = mix64(ctx.seed, static_cast<std::uint64_t>(inst));
    const WeightVector sgd = fedsgd_round(clients, w, fed);
    const WeightVector central = w - eta * mixture_grad(w, tasks, alpha);
    const double dev = (sgd - central).cwiseAbs().maxCoeff();
    inst_csv.row(inst, dev);
    worst_instance = std::max(worst_instance, dev);
  }

  // FedAvg with E=1, full batch, equal counts reproduces FedSGD round for round.
  Rng rng(ctx.seed, kTaskStream, 0xABCDULL);
  std::vector<ClientState> clients;
  std::vector<TaskSpec> tasks;
  std::vector<int> counts(static_cast<std::size_t>(count), 10);
  for (int k = 0; k < count; ++k) {
    Eigen::VectorXd center = rng.gauss_vector(dim);
    Eigen::VectorXd diag(dim);
    for (int i = 0; i < dim; ++i) diag[i] = rng.uniform(0.5, 2.0);
    tasks.push_back(TaskSpec::quadratic(center, diag.asDiagonal()));
  }
  const MixtureWeights alpha = MixtureWeights::uniform(static_cast<std::size_t>(count));
  const WeightVector w0 = rng.gauss_vector(dim);
  for (int k = 0; k < count; ++k)
    clients.push_back({w0, tasks[k], counts[static_cast<std::size_t>(k)]});
  FedConfig fed;
  fed.client_fraction = 1.0;
  fed.local_epochs = 1;
  fed.learning_rate = eta;
  fed.rounds = rounds;
  fed.seed = ctx.seed;
  fed.threads = ctx.threads;
  const auto avg_logs = run_federated(clients, w0, fed, FedAlgorithm::FedAvg, alpha);
  const auto sgd_logs = run_federated(clients, w0, fed, FedAlgorithm::FedSGD, alpha);

  CsvWriter traj_csv(ctx.artifact("fedavg_vs_fedsgd.csv"), {"round", "max_abs_deviation"});
  double worst_round = 0.0;
  for (int i = 0; i < rounds; ++i) {
    const double dev = (avg_logs[static_cast<std::size_t>(i)].server_weights -
                        sgd_logs[static_cast<std::size_t>(i)].server_weights)
                           .cwiseAbs()
                           .maxCoeff();
    traj_csv.row(i, dev);
    worst_round = std::max(worst_round, dev);
  }

  ctx.metrics["instances"] = instances;
  ctx.metrics["max_fedsgd_vs_centralized"] = worst_instance;
  ctx.metrics["max_fedavg_vs_fedsgd"] = worst_round;
  ctx.check("fedsgd_equals_centralized", worst_instance <= 1e-12, g17(worst_instance));
  ctx.check("fedavg_equals_fedsgd", worst_round <= 1e-12, g17(worst_round));
}

void run_coupled_sde(ScenarioContext& ctx) {
  auto& r = ctx.reader;
  TaskSet set = read_tasks(ctx);
  const double sigma = r.number("sde", "sigma", 0.05);
  const double lambda = r.number("sde", "lambda", 0.1);
  const double horizon = r.number("sde", "horizon", 8.0);
  const int steps = static_cast<int>(r.integer("sde", "steps", 2000));
  const int stride = static_cast<int>(r.integer("sde", "stride", 10));
  const std::string noise = r.str("sde", "noise_mode", "independent");
  const WeightVector w0 = read_init(ctx, set.dim);
  const double gap_tol = r.number("checks", "final_gap_tol", 5e-2);
  require(stride >= 1, "sde.stride must be at least 1");
  r.finish();

  const NoiseMode mode =
      noise == "shared" ? NoiseMode::Shared : NoiseMode::IndependentPerClient;
  const TimeGrid grid = TimeGrid::make(0.0, horizon, steps);
  const MixtureWeights alpha = MixtureWeights::sample_proportional(set.counts);
  std::vector<FederatedClientSpec> clients;
  for (const auto& task : set.tasks)
    clients.push_back(
        {w0, task, ControlSchedule::constant(set.dim, lambda, 0.0, horizon)});
  const std::vector<Eigen::VectorXd> sigmas(
      set.tasks.size(), Eigen::VectorXd::Constant(set.dim, sigma));

  const ParticleSystemResult sys =
      integrate_particle_system(clients, alpha, sigmas, grid, ctx.seed, mode, w0);

  CsvWriter server_csv(ctx.artifact("server.csv"), {"t", "risk", "state"});
  std::vector<double> risks(static_cast<std::size_t>(grid.nodes()));
  for (int n = 0; n < grid.nodes(); ++n) {
    risks[static_cast<std::size_t>(n)] =
        mixture_risk(sys.server.states[static_cast<std::size_t>(n)], set.tasks, alpha);
    if (n % stride == 0 || n == grid.steps) {
      std::string state;
      for (int i = 0; i < set.dim; ++i) {
        if (i) state += ';';
        state += g17(sys.server.states[static_cast<std::size_t>(n)][i]);
      }
      server_csv.row(grid.time(n), risks[static_cast<std::size_t>(n)], state);
    }
  }

  CsvWriter traj_csv(ctx.artifact("trajectories.csv"), {"t", "client_id", "dim", "value"});
  for (int n = 0; n < grid.nodes(); n += stride)
    for (std::size_t k = 0; k < sys.clients.size(); ++k)
      for (int i = 0; i < set.dim; ++i)
        traj_csv.row(grid.time(n), static_cast<int>(k), i,
                     sys.clients[k].states[static_cast<std::size_t>(n)][i]);

  const double optimum_risk =
      mixture_risk(mixture_optimum(set.tasks, alpha), set.tasks, alpha);
  const double final_gap = risks.back() - optimum_risk;
  const std::size_t half = risks.size() / 2;
  double first_half = 0.0, second_half = 0.0;
  for (std::size_t i = 0; i < half; ++i) first_half += risks[i];
  for (std::size_t i = half; i < risks.size(); ++i) second_half += risks[i];
  first_half /= static_cast<double>(half);
  second_half /= static_cast<double>(risks.size() - half);

  ctx.metrics["final_server_risk"] = risks.back();
  ctx.metrics["optimum_risk"] = optimum_risk;
  ctx.metrics["final_gap"] = final_gap;
  ctx.metrics["first_half_avg_risk"] = first_half;
  ctx.metrics["second_half_avg_risk"] = second_half;
  ctx.check("risk_decreasing_in_time_average", second_half < first_half,
            g17(first_half) + " -> " + g17(second_half));
  ctx.check("final_gap_within_tol", final_gap <= gap_tol,
            "gap " + g17(final_gap) + " vs tol " + g17(gap_tol));
}

void run_picard_equilibrium(ScenarioContext& ctx) {
  auto& r = ctx.reader;
  const std::string drift_name = r.str("picard", "drift", "mean-reversion");
  const double sigma = r.number("picard", "sigma", 0.5);
  const int paths = static_cast<int>(r.integer("picard", "paths", 4000));
  const double tol = r.number("picard", "tol", 1e-3);
  const int max_iters = static_cast<int>(r.integer("picard", "max_iters", 30));
  const double damping = r.number("picard", "damping", 1.0);
  const double horizon = r.number("picard", "horizon", 4.0);
  const int steps = static_cast<int>(r.integer("picard", "steps", 400));
  const std::vector<double> w0_mean = r.numbers("picard", "w0_mean", {0.0});
  const double w0_std = r.number("picard", "w0_std", 1.0);
  const int dim = static_cast<int>(w0_mean.size());

  MeanFieldDrift drift;
  if (drift_name == "mean-reversion") {
    drift = mean_reversion_drift(r.number("picard", "rate", 1.0));
  } else if (drift_name == "federated") {
    const double theta = r.number("picard", "theta", 0.0);
    const double curvature = r.number("picard", "curvature", 1.0);
    const double lambda = r.number("picard", "lambda", 1.0);
    const TaskSpec task = TaskSpec::quadratic(
        Eigen::VectorXd::Constant(dim, theta),
        curvature * Eigen::MatrixXd::Identity(dim, dim));
    drift = federated_meanfield_drift(
        task, ControlSchedule::constant(dim, lambda, 0.0, horizon));
  } else {
    require(false, "picard.drift must be 'mean-reversion' or 'federated'");
  }
  const double expected_var = r.number("picard", "expected_terminal_variance",
                                       std::numeric_limits<double>::quiet_NaN());
  r.finish();

  const TimeGrid grid = TimeGrid::make(0.0, horizon, steps);
  const Eigen::VectorXd mean_vec =
      Eigen::Map<const Eigen::VectorXd>(w0_mean.data(), dim);
  const PicardResult result = picard_fixed_point(
      gaussian_start(mean_vec, w0_std), drift, Eigen::VectorXd::Constant(dim, sigma),
      grid, paths, tol, max_iters, damping, ctx.seed, ctx.threads);

  CsvWriter hist(ctx.artifact("history.csv"), {"iter", "distance"});
  for (std::size_t i = 0; i < result.history.size(); ++i)
    hist.row(static_cast<int>(i + 1), result.history[i]);

  CsvWriter moments(ctx.artifact("flow_moments.csv"), {"t", "dim", "mean", "variance"});
  for (int n = 0; n < grid.nodes(); ++n) {
    const Eigen::VectorXd m = result.flow.at_node(n).mean();
    const Eigen::VectorXd v = result.flow.at_node(n).variance();
    for (int i = 0; i < dim; ++i) moments.row(grid.time(n), i, m[i], v[i]);
  }

  const int t_stride = std::max(1, steps / 50);
  const int p_stride = std::max(1, paths / 200);
  CsvWriter flow(ctx.artifact("flow.csv"), {"t", "particle_id", "dim", "value"});
  for (int n = 0; n < grid.nodes(); n += t_stride)
    for (int p = 0; p < paths; p += p_stride)
      for (int i = 0; i < dim; ++i)
        flow.row(grid.time(n), p, i,
                 result.flow.at_node(n).particles[static_cast<std::size_t>(p)][i]);

  const Eigen::VectorXd terminal_var = result.flow.measures.back().variance();
  ctx.metrics["converged"] = result.converged;
  ctx.metrics["iterations"] = result.iterations;
  ctx.metrics["final_distance"] = result.history.empty() ? 0.0 : result.history.back();
  ctx.metrics["terminal_variance"] = terminal_var[0];
  ctx.check("converged", result.converged,
            std::to_string(result.iterations) + " iterations");
  if (!std::isnan(expected_var)) {
    // CI for a sample variance of an approximately Gaussian population.
    const double se =
        terminal_var[0] * std::sqrt(2.0 / static_cast<double>(paths - 1));
    const bool ok = std::abs(terminal_var[0] - expected_var) <= 4.0 * se;
    ctx.metrics["expected_terminal_variance"] = expected_var;
    ctx.check("terminal_variance_in_ci", ok,
              g17(terminal_var[0]) + " vs " + g17(expected_var) + " +- " + g17(4.0 * se));
  }
}

void run_lq_hjb_fp(ScenarioContext& ctx) {
  auto& r = ctx.reader;
  LqProblem lq;
  lq.sigma = r.number("lq", "sigma", 1.0);
  lq.terminal_weight = r.number("lq", "terminal_weight", 1.0);
  lq.horizon = r.number("lq", "horizon", 1.0);
  const double x_min = r.number("grid", "x_min", -3.0);
  const double x_max = r.number("grid", "x_max", 3.0);
  const int nx = static_cast<int>(r.integer("grid", "nx", 301));
  const double u_bound = r.number("control_set", "u_bound", 5.0);
  const int u_points = static_cast<int>(r.integer("control_set", "points", 1001));
  const double mu0_mean = r.number("fp", "mu0_mean", 0.0);
  const double mu0_var = r.number("fp", "mu0_var", 0.25);
  const double interior = r.number("checks", "interior", 2.0);
  const double v_tol = r.number("checks", "v_tol", 1e-2);
  const double u_tol = r.number("checks", "u_tol", 2e-2);
  const double mass_tol = r.number("checks", "mass_tol", 1e-8);
  Grid1D grid = Grid1D::stable(x_min, x_max, nx, 0.0, lq.horizon, lq.sigma, u_bound);
  if (r.has("grid", "nt"))
    grid = Grid1D::make(x_min, x_max, nx, 0.0, lq.horizon,
                        static_cast<int>(r.integer("grid", "nt")));
  r.finish();

  const HjbProblem problem = lq_hjb_problem(lq, u_bound, u_points);
  const HjbSolution sol = solve_hjb_backward(problem, grid);

  double v_err = 0.0, u_err = 0.0;
  for (int i = 0; i < grid.nx; ++i) {
    const double x = grid.x(i);
    if (std::abs(x) > interior) continue;
    const LqValue ref = lq_reference(lq, 0.0, x);
    v_err = std::max(v_err, std::abs(sol.value.v(0, i) - ref.value));
    u_err = std::max(u_err, std::abs(sol.control.u(0, i) - ref.control));
  }

  const DensityGrid density = solve_fp_forward(
      gaussian_density(grid, mu0_mean, mu0_var),
      drift_from_control(sol.control, problem.drift_xu), lq.sigma, grid);
  double mass_drift = 0.0, min_density = 0.0;
  for (int n = 0; n <= grid.nt; ++n) {
    mass_drift = std::max(mass_drift, std::abs(density.mass(n) - 1.0));
    min_density = std::min(min_density, density.mu.row(n).minCoeff());
  }

  write_matrix_csv(ctx, "v.csv", sol.value.v);
  write_matrix_csv(ctx, "u.csv", sol.control.u);
  write_matrix_csv(ctx, "mu.csv", density.mu);
  write_grid_meta(ctx, "grid.meta.json", grid,
                  json{{"sigma", lq.sigma},
                       {"terminal_weight", lq.terminal_weight},
                       {"u_bound", u_bound},
                       {"u_points", u_points}});

  ctx.metrics["v_linf_error_interior"] = v_err;
  ctx.metrics["u_linf_error_interior"] = u_err;
  ctx.metrics["fp_max_mass_drift"] = mass_drift;
  ctx.metrics["fp_min_density"] = min_density;
  ctx.check("v_error_within_tol", v_err <= v_tol, g17(v_err) + " vs " + g17(v_tol));
  ctx.check("u_error_within_tol", u_err <= u_tol, g17(u_err) + " vs " + g17(u_tol));
  ctx.check("fp_mass_conserved", mass_drift <= mass_tol,
            g17(mass_drift) + " vs " + g17(mass_tol));
}

void run_coupled_mfg(ScenarioContext& ctx) {
  auto& r = ctx.reader;
  const double coupling = r.number("mfg", "coupling", 0.1);
  const double tol = r.number("mfg", "tol", 1e-4);
  const int max_iters = static_cast<int>(r.integer("mfg", "max_iters", 50));
  const double damping = r.number("mfg", "damping", 0.5);
  const double sigma = r.number("mfg", "sigma", 1.0);
  const double terminal_weight = r.number("mfg", "terminal_weight", 1.0);
  const double horizon = r.number("mfg", "horizon", 1.0);
  const double x_min = r.number("grid", "x_min", -3.0);
  const double x_max = r.number("grid", "x_max", 3.0);
  const int nx = static_cast<int>(r.integer("grid", "nx", 121));
  const double u_bound = r.number("control_set", "u_bound", 5.0);
  const int u_points = static_cast<int>(r.integer("control_set", "points", 201));
  const double mu0_mean = r.number("fp", "mu0_mean", 0.0);
  const double mu0_var = r.number("fp", "mu0_var", 0.25);
  r.finish();

  const Grid1D grid = Grid1D::stable(x_min, x_max, nx, 0.0, horizon, sigma, u_bound);
  CoupledProblem problem;
  problem.running_xu = [](double x, double u) { return -0.5 * (x * x + u * u); };
  problem.coupling = [coupling](double, double x, const DensitySlice& mu) {
    const double d = x - mu.mean();
    return -coupling * d * d;
  };
  problem.terminal = [terminal_weight](double x) { return -0.5 * terminal_weight * x * x; };
  problem.drift_xu = [](double, double u) { return u; };
  problem.sigma = sigma;
  problem.controls = ControlSet{-u_bound, u_bound, u_points};

  const CoupledSolution sol = solve_coupled_mfg(
      problem, gaussian_density(grid, mu0_mean, mu0_var), grid, tol, max_iters, damping);

  CsvWriter hist(ctx.artifact("history.csv"), {"iter", "residual"});
  for (std::size_t i = 0; i < sol.history.size(); ++i)
    hist.row(static_cast<int>(i + 1), sol.history[i]);
  write_matrix_csv(ctx, "v.csv", sol.value.v);
  write_matrix_csv(ctx, "u.csv", sol.control.u);
  write_matrix_csv(ctx, "mu.csv", sol.density.mu);
  write_grid_meta(ctx, "grid.meta.json", grid,
                  json{{"sigma", sigma},
                       {"coupling", coupling},
                       {"damping", damping},
                       {"tol", tol}});

  double max_abs_mean = 0.0;
  for (int n = 0; n <= grid.nt; ++n)
    max_abs_mean = std::max(max_abs_mean, std::abs(sol.density.mean(n)));

  bool tail_decreasing = true;
  for (std::size_t i = 2; i < sol.history.size(); ++i)
    tail_decreasing &= sol.history[i] <= sol.history[i - 1];

  ctx.metrics["converged"] = sol.converged;
  ctx.metrics["iterations"] = sol.iterations;
  ctx.metrics["final_residual"] = sol.history.empty() ? 0.0 : sol.history.back();
  ctx.metrics["max_abs_density_mean"] = max_abs_mean;
  ctx.metrics["tail_decreasing"] = tail_decreasing;
  ctx.check("converged", sol.converged, std::to_string(sol.iterations) + " iterations");
  ctx.check("residual_tail_decreasing", tail_decreasing, "");
}

void run_nash_check(ScenarioContext& ctx) {
  auto& r = ctx.reader;
  const double sigma = r.number("nash", "sigma", 1.0);
  const double x0 = r.number("nash", "x0", 0.0);
  const double horizon = r.number("nash", "horizon", 1.0);
  const int steps = static_cast<int>(r.integer("nash", "steps", 500));
  const int paths = static_cast<int>(r.integer("nash", "paths", 10000));
  const int count = static_cast<int>(r.integer("nash", "perturbations", 20));
  const double bound = r.number("nash", "bound", 1.0);
  const double offset = r.number("nash", "offset", 0.5);
  const double u_min = r.number("nash", "u_min", -5.0);
  const double u_max = r.number("nash", "u_max", 5.0);
  const double terminal_weight = r.number("nash", "terminal_weight", 1.0);
  r.finish();

  const TimeGrid grid = TimeGrid::make(0.0, horizon, steps);
  const CostSpec cost = CostSpec::lq(terminal_weight);
  const auto base_policy = [](double, double x) { return -x; };
  const auto lq_drift = [](double, const Eigen::VectorXd&,
                           const Eigen::VectorXd& u) -> Eigen::VectorXd { return u; };
  const auto dynamics_for = [&](const Perturbation& pert) {
    return feedback_dynamics(lq_drift, perturb_policy_1d(base_policy, pert, u_min, u_max));
  };

  std::vector<Perturbation> perts = random_perturbations(grid, 1, count, bound, ctx.seed);
  Perturbation offset_pert = Perturbation::none(1, 0.0, horizon);
  offset_pert.delta.lambdas = {Eigen::VectorXd::Constant(1, offset)};
  perts.push_back(offset_pert);

  const DeviationReport report = nash_deviation_gap(
      dynamics_for, perts, cost, Eigen::VectorXd::Constant(1, x0),
      Eigen::VectorXd::Constant(1, sigma), grid, paths, ctx.seed, ctx.threads);

  const auto kind_name = [](PerturbKind k) {
    switch (k) {
      case PerturbKind::ConstantOffset: return "offset";
      case PerturbKind::IntervalBump: return "bump";
      case PerturbKind::Scale: return "scale";
    }
    return "?";
  };
  CsvWriter dev_csv(ctx.artifact("deviations.csv"),
                    {"id", "kind", "gap", "gap_std_error", "payoff", "payoff_std_error"});
  bool all_within = true;
  for (std::size_t i = 0; i < report.gaps.size(); ++i) {
    const bool is_offset_probe = i + 1 == report.gaps.size();
    dev_csv.row(is_offset_probe ? std::string("offset_probe") : std::to_string(i),
                kind_name(perts[i].kind), report.gaps[i], report.gap_std_errors[i],
                report.perturbed[i].mean, report.perturbed[i].std_error);
    if (!is_offset_probe)
      all_within &= report.gaps[i] <= 4.0 * report.gap_std_errors[i];
  }
  const double offset_gap = report.gaps.back();
  const double offset_se = report.gap_std_errors.back();

  json summary;
  summary["baseline_payoff"] = report.baseline.mean;
  summary["baseline_std_error"] = report.baseline.std_error;
  summary["offset_gap"] = offset_gap;
  summary["offset_gap_std_error"] = offset_se;
  std::ofstream(ctx.artifact("deviations.json")) << summary.dump(2) << '\n';

  ctx.metrics["baseline_payoff"] = report.baseline.mean;
  ctx.metrics["all_gaps_within_4se"] = all_within;
  ctx.metrics["offset_gap"] = offset_gap;
  ctx.check("no_profitable_deviation", all_within, "");
  ctx.check("offset_strictly_worse", offset_gap < -4.0 * offset_se,
            g17(offset_gap) + " vs -4se " + g17(-4.0 * offset_se));
}

void run_gc_diagnostic(ScenarioContext& ctx) {
  auto& r = ctx.reader;
  const std::vector<double> p_raw = r.numbers("gc", "p_values", {10, 100, 1000});
  const int replicates = static_cast<int>(r.integer("gc", "replicates", 20));
  const int reference_size = static_cast<int>(r.integer("gc", "reference_size", 100000));
  const double mean = r.number("gc", "mean", 0.0);
  const double stddev = r.number("gc", "std", 1.0);
  r.finish();

  std::vector<std::size_t> p_values;
  for (double p : p_raw) p_values.push_back(static_cast<std::size_t>(p));

  const ScalarSampler sampler = [mean, stddev](std::size_t n, Rng& rng) {
    std::vector<double> out(n);
    for (auto& v : out) v = mean + stddev * rng.gauss();
    return out;
  };
  Rng ref_rng(ctx.seed, 0x72656665ULL);
  std::vector<double> ref_draw(static_cast<std::size_t>(reference_size));
  for (auto& v : ref_draw) v = mean + stddev * ref_rng.gauss();
  const EmpiricalMeasure reference = empirical_measure_1d(ref_draw);

  const std::vector<GcRow> rows =
      gc_diagnostic(p_values, reference, sampler, replicates, ctx.seed);

  CsvWriter csv(ctx.artifact("gc.csv"), {"p", "median_w1"});
  bool decreasing = true;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    csv.row(rows[i].sample_count, rows[i].median_w1);
    if (i) decreasing &= rows[i].median_w1 < rows[i - 1].median_w1;
  }
  ctx.metrics["strictly_decreasing"] = decreasing;
  ctx.check("median_w1_strictly_decreasing", decreasing, "");
}

using ScenarioFn = void (*)(ScenarioContext&);

ScenarioFn lookup_scenario(const std::string& name) {
  if (name == "fedavg-baseline") return run_fedavg_baseline;
  if (name == "fedsgd-equivalence") return run_fedsgd_equivalence;
  if (name == "coupled-sde") return run_coupled_sde;
  if (name == "picard-equilibrium") return run_picard_equilibrium;
  if (name == "lq-hjb-fp") return run_lq_hjb_fp;
  if (name == "coupled-mfg") return run_coupled_mfg;
  if (name == "nash-check") return run_nash_check;
  if (name == "gc-diagnostic") return run_gc_diagnostic;
  require(false, "unknown scenario '" + name + "'");
  return nullptr;
}

json manifest_to_json(const RunManifest& m) {
  json j;
  j["scenario"] = m.scenario;
  j["config_hash"] = m.config_hash;
  j["tool_version"] = m.tool_version;
  j["wall_clock_seconds"] = m.wall_clock_seconds;
  j["files"] = m.files;
  j["checks"] = json::array();
  for (const auto& c : m.checks)
    j["checks"].push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
  return j;
}

}  // namespace

bool RunManifest::all_passed() const {
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

int RunManifest::exit_status() const {
  if (!require_convergence) return 0;
  for (const auto& c : checks)
    if (c.name == "converged" && !c.pass) return 2;
  return 0;
}

RunManifest run_scenario(const std::filesystem::path& config_path,
                         const RunOverrides& overrides) {
  return run_scenario_config(ParsedConfig::parse_file(config_path), overrides);
}

RunManifest run_scenario_config(ParsedConfig config, const RunOverrides& overrides) {
  const auto start = std::chrono::steady_clock::now();

  ScenarioContext ctx(std::move(config));
  auto& r = ctx.reader;
  const std::string scenario = r.str("run", "scenario");
  // value_or evaluates eagerly, so the config keys count as consumed even
  // when a CLI override wins.
  ctx.seed = overrides.seed.value_or(
      static_cast<std::uint64_t>(r.integer("run", "seed", 0)));
  ctx.threads = overrides.threads.value_or(
      static_cast<int>(r.integer("run", "threads", 1)));
  require(ctx.threads >= 1, "threads must be at least 1");
  ctx.manifest.require_convergence = r.boolean("run", "require_convergence", false);

  std::string out_dir;
  if (overrides.out_dir) {
    out_dir = *overrides.out_dir;
    r.str("run", "out", "");  // consumed either way
  } else if (r.has("run", "out")) {
    out_dir = r.str("run", "out");
  } else if (const char* env = std::getenv("MFFLSIM_OUT")) {
    out_dir = std::string(env) + "/" + scenario;
  } else {
    out_dir = "out/" + scenario;
  }
  ctx.out = out_dir;
  std::filesystem::create_directories(ctx.out);

  ctx.manifest.scenario = scenario;
  ctx.manifest.config_hash = ctx.reader.config().hash();

  lookup_scenario(scenario)(ctx);

  std::ofstream(ctx.artifact("metrics.json")) << ctx.metrics.dump(2) << '\n';

  const auto end = std::chrono::steady_clock::now();
  ctx.manifest.wall_clock_seconds =
      std::chrono::duration<double>(end - start).count();
  std::ofstream(ctx.out / "manifest.json")
      << manifest_to_json(ctx.manifest).dump(2) << '\n';
  return ctx.manifest;
}

std::vector<std::filesystem::path> find_manifests(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::exists(dir)) return out;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().filename() == "manifest.json")
      out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

ReportSummary emit_report(const std::vector<std::filesystem::path>& manifest_files,
                          const std::filesystem::path& summary_path) {
  require(!manifest_files.empty(), "no manifests to report on");
  ReportSummary summary;
  json all = json::array();
  std::string table = "scenario                 checks  pass  fail\n";
  for (const auto& path : manifest_files) {
    std::ifstream in(path);
    require(in.good(), "cannot read manifest " + path.string());
    json m = json::parse(in);
    all.push_back(m);
    ++summary.scenarios;
    int pass = 0, failcount = 0;
    for (const auto& c : m.value("checks", json::array()))
      (c.value("pass", false) ? pass : failcount) += 1;
    summary.checks_passed += pass;
    summary.checks_failed += failcount;
    char line[160];
    std::snprintf(line, sizeof(line), "%-24s %6d %5d %5d\n",
                  m.value("scenario", std::string("?")).c_str(), pass + failcount, pass,
                  failcount);
    table += line;
  }
  char totals[160];
  std::snprintf(totals, sizeof(totals), "%-24s %6d %5d %5d\n", "total",
                summary.checks_passed + summary.checks_failed, summary.checks_passed,
                summary.checks_failed);
  table += totals;
  summary.table = table;

  json out;
  out["scenarios"] = summary.scenarios;
  out["checks_passed"] = summary.checks_passed;
  out["checks_failed"] = summary.checks_failed;
  out["manifests"] = all;
  if (!summary_path.parent_path().empty())
    std::filesystem::create_directories(summary_path.parent_path());
  std::ofstream(summary_path) << out.dump(2) << '\n';
  return summary;
}

}  // namespace mffl
