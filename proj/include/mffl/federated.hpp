#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mffl/task_model.hpp"

namespace mffl {

enum class Weighting { SampleProportional, Uniform };
enum class FedAlgorithm { FedAvg, FedSGD };

struct FedConfig {
  double client_fraction = 1.0;  // C
  int local_epochs = 1;          // E
  std::optional<int> batch_size; // empty = full batch; clamped to m_k
  double learning_rate = 0.1;    // eta, shared across clients
  int rounds = 1;                // R
  Weighting weighting = Weighting::SampleProportional;
  std::uint64_t seed = 0;
  std::optional<double> stop_risk;  // optional early-stop threshold
  int threads = 1;

  void validate(std::size_t client_count) const;
};

struct ClientState {
  WeightVector weights;
  TaskSpec task;
  int sample_count = 1;  // m_k
};

struct RoundLog {
  int round = 0;
  WeightVector server_weights;
  double server_risk = 0.0;
  std::vector<int> selected;
};

// ceil(C*p) distinct client indices, uniform without replacement, sorted.
std::vector<int> select_clients(std::size_t client_count, double fraction,
                                std::uint64_t seed, int round);

// Aggregation weights over the selected clients; they sum to 1.
std::vector<double> aggregation_weights(const std::vector<ClientState>& clients,
                                        const std::vector<int>& selected,
                                        Weighting weighting);

// E epochs of minibatch gradient descent starting from the server weights.
// Quadratic tasks take one exact full-gradient step per epoch.
WeightVector client_update(const ClientState& client, const WeightVector& server_w,
                           const FedConfig& cfg, std::uint64_t round_seed);

std::pair<WeightVector, RoundLog> fedavg_round(const std::vector<ClientState>& clients,
                                               const WeightVector& server_w,
                                               const FedConfig& cfg, int round,
                                               const MixtureWeights& alpha);

// One gradient-aggregation step over all clients:
// w - eta * sum_k alpha_k grad_k(w), with alpha from cfg.weighting.
WeightVector fedsgd_round(const std::vector<ClientState>& clients,
                          const WeightVector& server_w, const FedConfig& cfg);

std::vector<RoundLog> run_federated(std::vector<ClientState> clients,
                                    WeightVector server_w, const FedConfig& cfg,
                                    FedAlgorithm algorithm,
                                    const MixtureWeights& alpha);

}  // namespace mffl
