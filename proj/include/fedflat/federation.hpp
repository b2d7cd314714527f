#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedflat/data.hpp"
#include "fedflat/model.hpp"
#include "fedflat/optim.hpp"

namespace fedflat {

enum class LocalOptimizer { sgd, sam, asam };

struct AugmentConfig {
  bool standard = false;     // pad-4 crop + flip (image inputs only)
  double mixup_alpha = 0.0;  // 0 disables mixup
  std::size_t cutout = 0;    // 0 disables cutout
  ChannelStats normalization;  // empty: no normalization
};

struct ServerConfig {
  double momentum = 0.0;  // beta; 0 with lr 1 is plain FedAvg
  double lr = 1.0;
};

struct SwaConfig {
  bool enabled = false;
  std::size_t start_round = 1;  // 1-based first round of the SWA phase
  CyclicLr schedule;
  /// Apply the cyclic schedule before start_round as well.
  bool cyclic_before_start = false;
  /// Keep and evaluate the averaged model. Does not affect the SGD line.
  bool report = true;
};

struct FedConfig {
  std::size_t rounds = 1;
  std::size_t clients_per_round = 1;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 64;
  LocalOptimizer optimizer = LocalOptimizer::sgd;
  SgdConfig sgd;
  SamConfig sam;
  AugmentConfig augment;
  ServerConfig server;
  SwaConfig swa;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

void validate(const FedConfig& cfg, std::size_t num_clients);

struct ServerState {
  ParamVector theta;
  ParamVector momentum;
  ParamVector swa_theta;
  std::size_t n_models = 0;
  std::size_t round = 0;  // completed rounds
};

ServerState make_server(ParamVector initial);

struct ClientUpdate {
  std::size_t client_id = 0;
  ParamVector theta;
  std::size_t n_samples = 0;
  double train_loss = 0.0;
};

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;
};

struct RoundMetrics {
  std::size_t round = 0;
  double lr = 0.0;
  double mean_client_train_loss = 0.0;
  std::optional<double> test_acc_sgd;
  std::optional<double> test_acc_swa;
  std::optional<double> lambda_max;

  /// The SWA line when it has absorbed models, otherwise the SGD line.
  [[nodiscard]] std::optional<double> headline() const {
    return test_acc_swa ? test_acc_swa : test_acc_sgd;
  }
};

/// m distinct client ids, uniform without replacement, sorted ascending;
/// deterministic in (seed, round).
std::vector<std::size_t> sample_clients(std::size_t num_clients, std::size_t m, std::size_t round,
                                        std::uint64_t seed);

/// Client-local RNG stream keyed by (seed, round, client).
Rng client_rng(std::uint64_t seed, std::size_t round, std::size_t client_id);

/// Sample order for one local epoch (shuffle of the shard indices).
std::vector<std::size_t> epoch_order(const ClientShard& shard, Rng& rng);

/// Learning rate broadcast to clients in 1-based round t.
double round_lr(std::size_t round, const FedConfig& cfg);

/// Runs E local epochs from a copy of theta and returns the client's model.
ClientUpdate local_train(const ParamVector& theta, const ModelSpec& model, const Dataset& train,
                         const ClientShard& shard, const FedConfig& cfg, std::size_t round,
                         double lr);

/// sum_k (n_k / N) theta_k in ascending client-id order, N over the updates given.
ParamVector fedavg_aggregate(std::span<const ClientUpdate> updates);

/// delta = theta - aggregate; v = beta v + delta; theta = theta - lr v.
void fedavgm_update(ServerState& server, const ParamVector& aggregate, double beta, double server_lr);

/// theta_swa = (theta_swa * n + theta) / (n + 1); n += 1.
void swa_absorb(ServerState& server);

/// True when 1-based round t closes an SWA cycle.
bool is_cycle_boundary(std::size_t round, const SwaConfig& swa);

Evaluation evaluate(std::span<const double> theta, const ModelSpec& model, const Dataset& data,
                    const ChannelStats& normalization = {});

struct FederatedTask {
  const ModelSpec& model;
  const Dataset& train;
  std::span<const ClientShard> shards;
  const Dataset* test = nullptr;  // null: no evaluation
};

/// One communication round. Advances server.round and returns the metrics.
/// When updates_out is given it receives the client models of the round.
RoundMetrics run_round(ServerState& server, const FederatedTask& task, const FedConfig& cfg,
                       std::vector<ClientUpdate>* updates_out = nullptr);

}  // namespace fedflat
