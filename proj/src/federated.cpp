#include "mffl/federated.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "mffl/rng.hpp"

namespace mffl {

namespace {
constexpr std::uint64_t kSelectStream = 0x73656c65ULL;
constexpr std::uint64_t kClientStream = 0x636c6e74ULL;
}  // namespace

void FedConfig::validate(std::size_t client_count) const {
  require(client_fraction >= 0.0 && client_fraction <= 1.0,
          "client_fraction must lie in [0, 1]");
  require(local_epochs >= 1, "local_epochs must be at least 1");
  if (batch_size) require(*batch_size >= 1, "batch_size must be at least 1");
  require(learning_rate >= 0.0, "learning_rate must be non-negative");
  require(rounds >= 1, "rounds must be at least 1");
  require(threads >= 1, "threads must be at least 1");
  if (client_count >= 1) {
    const auto selected = static_cast<std::size_t>(
        std::ceil(client_fraction * static_cast<double>(client_count)));
    require(selected >= 1, "client_fraction selects no clients");
  }
}

std::vector<int> select_clients(std::size_t client_count, double fraction,
                                std::uint64_t seed, int round) {
  const auto n = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(client_count)));
  require(n >= 1 && n <= client_count, "selection size out of range");
  std::vector<int> ids(client_count);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(seed, kSelectStream, static_cast<std::uint64_t>(round));
  // Partial Fisher-Yates: the first n entries are a uniform sample
  // without replacement.
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.index(client_count - i);
    std::swap(ids[i], ids[j]);
  }
  ids.resize(n);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<double> aggregation_weights(const std::vector<ClientState>& clients,
                                        const std::vector<int>& selected,
                                        Weighting weighting) {
  require(!selected.empty(), "no clients selected");
  std::vector<double> w(selected.size());
  if (weighting == Weighting::Uniform) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(selected.size()));
  } else {
    double total = 0.0;
    for (int id : selected) total += clients[static_cast<std::size_t>(id)].sample_count;
    for (std::size_t i = 0; i < selected.size(); ++i)
      w[i] = clients[static_cast<std::size_t>(selected[i])].sample_count / total;
  }
  // Pin the sum to exactly 1 so fixed-order reductions stay on the simplex.
  w.back() = 1.0 - std::accumulate(w.begin(), w.end() - 1, 0.0);
  return w;
}

WeightVector client_update(const ClientState& client, const WeightVector& server_w,
                           const FedConfig& cfg, std::uint64_t round_seed) {
  WeightVector w = server_w;
  const auto check = [&](int epoch) {
    if (!all_finite(w))
      throw DivergenceError("client update diverged at epoch " + std::to_string(epoch));
  };

  if (client.task.family == TaskFamily::Quadratic) {
    // No dataset: each epoch is one deterministic full-gradient step.
    for (int e = 0; e < cfg.local_epochs; ++e) {
      w -= cfg.learning_rate * grad(w, client.task);
      check(e);
    }
    return w;
  }

  const auto m = static_cast<int>(client.task.data.size());
  int batch = cfg.batch_size.value_or(m);
  if (batch > m) {
    std::cerr << "mffl: batch_size " << batch << " exceeds dataset size " << m
              << "; clamping\n";
    batch = m;
  }
  Rng rng(round_seed, kClientStream);
  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  for (int e = 0; e < cfg.local_epochs; ++e) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.index(i)]);
    for (int start = 0; start < m; start += batch) {
      const int len = std::min(batch, m - start);
      WeightVector g = WeightVector::Zero(w.size());
      const int c = client.task.class_dim();
      const int dx = client.task.feature_dim();
      for (int i = start; i < start + len; ++i) {
        const int row = order[static_cast<std::size_t>(i)];
        const Eigen::VectorXd x = client.task.data.features.row(row);
        Eigen::VectorXd s(c);
        for (int j = 0; j < c; ++j) s[j] = w.segment(j * dx, dx).dot(x);
        Eigen::VectorXd p = (s.array() - s.maxCoeff()).exp();
        p /= p.sum();
        p[client.task.data.labels[static_cast<std::size_t>(row)]] -= 1.0;
        for (int j = 0; j < c; ++j) g.segment(j * dx, dx) += p[j] * x;
      }
      w -= (cfg.learning_rate / static_cast<double>(len)) * g;
    }
    check(e);
  }
  return w;
}

std::pair<WeightVector, RoundLog> fedavg_round(const std::vector<ClientState>& clients,
                                               const WeightVector& server_w,
                                               const FedConfig& cfg, int round,
                                               const MixtureWeights& alpha) {
  cfg.validate(clients.size());
  const std::vector<int> selected =
      select_clients(clients.size(), cfg.client_fraction, cfg.seed, round);
  const std::vector<double> weights =
      aggregation_weights(clients, selected, cfg.weighting);

  std::vector<WeightVector> updates(selected.size());
  std::vector<std::exception_ptr> failures(selected.size());
  parallel_for(selected.size(), cfg.threads, [&](std::size_t i) {
    try {
      const int id = selected[i];
      const std::uint64_t round_seed =
          mix64(cfg.seed, static_cast<std::uint64_t>(round),
                static_cast<std::uint64_t>(id));
      updates[i] = client_update(clients[static_cast<std::size_t>(id)], server_w,
                                 cfg, round_seed);
    } catch (const DivergenceError& e) {
      failures[i] = std::make_exception_ptr(DivergenceError(
          "client " + std::to_string(selected[i]) + " in round " +
          std::to_string(round) + ": " + e.what()));
    }
  });
  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);

  WeightVector next = WeightVector::Zero(server_w.size());
  for (std::size_t i = 0; i < selected.size(); ++i) next += weights[i] * updates[i];

  std::vector<TaskSpec> tasks;
  tasks.reserve(clients.size());
  for (const auto& c : clients) tasks.push_back(c.task);
  RoundLog log;
  log.round = round;
  log.server_weights = next;
  log.server_risk = mixture_risk(next, tasks, alpha);
  log.selected = selected;
  return {next, log};
}

WeightVector fedsgd_round(const std::vector<ClientState>& clients,
                          const WeightVector& server_w, const FedConfig& cfg) {
  require(!clients.empty(), "no clients");
  std::vector<int> all(clients.size());
  std::iota(all.begin(), all.end(), 0);
  const std::vector<double> weights =
      aggregation_weights(clients, all, cfg.weighting);
  WeightVector g = WeightVector::Zero(server_w.size());
  for (std::size_t k = 0; k < clients.size(); ++k)
    g += weights[k] * grad(server_w, clients[k].task);
  WeightVector next = server_w - cfg.learning_rate * g;
  if (!all_finite(next)) throw DivergenceError("fedsgd step diverged");
  return next;
}

std::vector<RoundLog> run_federated(std::vector<ClientState> clients,
                                    WeightVector server_w, const FedConfig& cfg,
                                    FedAlgorithm algorithm,
                                    const MixtureWeights& alpha) {
  cfg.validate(clients.size());
  require(clients.size() == alpha.size(), "mixture weight/client count mismatch");
  std::vector<TaskSpec> tasks;
  tasks.reserve(clients.size());
  for (const auto& c : clients) tasks.push_back(c.task);

  std::vector<RoundLog> logs;
  logs.reserve(static_cast<std::size_t>(cfg.rounds));
  for (int r = 0; r < cfg.rounds; ++r) {
    try {
      if (algorithm == FedAlgorithm::FedAvg) {
        auto [next, log] = fedavg_round(clients, server_w, cfg, r, alpha);
        server_w = next;
        for (std::size_t i = 0; i < log.selected.size(); ++i)
          clients[static_cast<std::size_t>(log.selected[i])].weights = server_w;
        logs.push_back(std::move(log));
      } else {
        server_w = fedsgd_round(clients, server_w, cfg);
        RoundLog log;
        log.round = r;
        log.server_weights = server_w;
        log.server_risk = mixture_risk(server_w, tasks, alpha);
        log.selected.resize(clients.size());
        std::iota(log.selected.begin(), log.selected.end(), 0);
        logs.push_back(std::move(log));
      }
    } catch (const DivergenceError& e) {
      throw DivergenceError("round " + std::to_string(r) + ": " + e.what());
    }
    if (cfg.stop_risk && logs.back().server_risk <= *cfg.stop_risk) break;
  }
  return logs;
}

}  // namespace mffl
