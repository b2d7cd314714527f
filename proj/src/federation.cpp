#include "fedflat/federation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "fedflat/errors.hpp"

namespace fedflat {

void validate(const FedConfig& cfg, std::size_t num_clients) {
  if (cfg.rounds < 1) throw ConfigError("federation: rounds must be >= 1");
  if (cfg.clients_per_round < 1) throw ConfigError("federation: clients_per_round must be >= 1");
  if (cfg.clients_per_round > num_clients) {
    throw ConfigError("federation: clients_per_round " + std::to_string(cfg.clients_per_round) +
                      " exceeds " + std::to_string(num_clients) + " clients");
  }
  if (cfg.local_epochs < 1) throw ConfigError("federation: local_epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("federation: batch_size must be >= 1");
  if (cfg.workers < 1) throw ConfigError("federation: workers must be >= 1");
  if (!(cfg.server.momentum >= 0.0 && cfg.server.momentum < 1.0)) {
    throw ConfigError("server: momentum must be in [0,1)");
  }
  if (!(cfg.server.lr > 0.0)) throw ConfigError("server: lr must be positive");
  if (cfg.augment.mixup_alpha < 0.0) throw ConfigError("augment: mixup alpha must be >= 0");
  validate(cfg.sgd);
  validate(cfg.sam);
  if (cfg.swa.enabled) {
    validate(cfg.swa.schedule);
    if (cfg.swa.start_round < 1) throw ConfigError("swa: start_round must be >= 1");
  }
}

ServerState make_server(ParamVector initial) {
  ServerState s;
  s.momentum = initial.like(std::vector<double>(initial.size(), 0.0));
  s.swa_theta = initial.like(std::vector<double>(initial.size(), 0.0));
  s.theta = std::move(initial);
  return s;
}

std::vector<std::size_t> sample_clients(std::size_t num_clients, std::size_t m, std::size_t round,
                                        std::uint64_t seed) {
  if (m > num_clients) {
    throw ConfigError("sample_clients: cannot pick " + std::to_string(m) + " of " +
                      std::to_string(num_clients) + " clients");
  }
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  Rng rng = make_rng(seed, {key(Stream::sampling), round});
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, num_clients - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

Rng client_rng(std::uint64_t seed, std::size_t round, std::size_t client_id) {
  return make_rng(seed, {key(Stream::client), round, client_id});
}

std::vector<std::size_t> epoch_order(const ClientShard& shard, Rng& rng) {
  std::vector<std::size_t> order = shard.indices;
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

double round_lr(std::size_t round, const FedConfig& cfg) {
  const auto& swa = cfg.swa;
  if (!swa.enabled) return cfg.sgd.lr;
  if (round >= swa.start_round) return cyclic_lr(round - swa.start_round + 1, swa.schedule);
  if (swa.cyclic_before_start) return cyclic_lr(round, swa.schedule);
  return cfg.sgd.lr;
}

namespace {

bool is_image(const Batch& b) { return b.inputs.rank() == 4; }

Batch augment_batch(const Batch& batch, const AugmentConfig& aug, Rng& rng) {
  Batch out = batch;
  if (is_image(out)) {
    if (aug.standard) {
      out = map_images(out, [&](const Tensor& img) { return standard_augment(img, aug.normalization, rng); });
    } else if (!aug.normalization.mean.empty()) {
      out = map_images(out, [&](const Tensor& img) { return normalize(img, aug.normalization); });
    }
    if (aug.cutout > 0) {
      out = map_images(out, [&](const Tensor& img) { return cutout(img, aug.cutout, rng); });
    }
  }
  if (aug.mixup_alpha > 0.0 && out.size() >= 2) out = mixup_batch(out, aug.mixup_alpha, rng);
  return out;
}

}  // namespace

ClientUpdate local_train(const ParamVector& theta, const ModelSpec& model, const Dataset& train,
                         const ClientShard& shard, const FedConfig& cfg, std::size_t round,
                         double lr) {
  if (shard.indices.empty()) throw UsageError("local_train: empty shard");
  ClientUpdate update{.client_id = shard.client_id, .theta = theta, .n_samples = shard.size()};
  Rng rng = client_rng(cfg.seed, round, shard.client_id);
  SgdConfig sgd = cfg.sgd;
  sgd.lr = lr;
  SamConfig sam = cfg.sam;
  sam.adaptive = cfg.optimizer == LocalOptimizer::asam;
  SgdState state;
  std::span<double> params = update.theta.data();

  double loss_sum = 0.0;
  std::size_t steps = 0;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    const std::vector<std::size_t> order = epoch_order(shard, rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Batch batch = augment_batch(make_batch(train, idx), cfg.augment, rng);
      const Objective objective = model_objective(model, batch);
      if (cfg.optimizer == LocalOptimizer::sgd) {
        const LossGrad lg = objective(params);
        sgd_step(params, lg.grad, state, sgd);
        loss_sum += lg.loss;
      } else {
        loss_sum += sam_step(params, objective, state, sam, sgd);
      }
      ++steps;
    }
  }
  update.train_loss = loss_sum / static_cast<double>(steps);
  return update;
}

ParamVector fedavg_aggregate(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw UsageError("fedavg_aggregate: no client updates");
  std::vector<const ClientUpdate*> sorted;
  for (const auto& u : updates) {
    if (u.n_samples == 0) throw UsageError("fedavg_aggregate: client with zero samples");
    if (!u.theta.same_layout(updates.front().theta)) {
      throw UsageError("fedavg_aggregate: client parameter layouts differ");
    }
    sorted.push_back(&u);
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });
  double total = 0.0;
  for (const auto* u : sorted) total += static_cast<double>(u->n_samples);
  std::vector<double> agg(updates.front().theta.size(), 0.0);
  for (const auto* u : sorted) {
    const double w = static_cast<double>(u->n_samples) / total;
    vec::axpy(w, u->theta.data(), agg);
  }
  return updates.front().theta.like(std::move(agg));
}

void fedavgm_update(ServerState& server, const ParamVector& aggregate, double beta,
                    double server_lr) {
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("fedavgm: beta must be in [0,1)");
  if (!server.theta.same_layout(aggregate)) throw UsageError("fedavgm: layout mismatch");
  auto theta = server.theta.data();
  auto v = server.momentum.data();
  const auto agg = aggregate.data();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double delta = theta[i] - agg[i];
    v[i] = beta * v[i] + delta;
    // theta - lr v, written around the aggregate so that beta = 0, lr = 1
    // returns the aggregate bit for bit.
    theta[i] = agg[i] + (delta - server_lr * v[i]);
  }
}

void swa_absorb(ServerState& server) {
  const double n = static_cast<double>(server.n_models);
  auto avg = server.swa_theta.data();
  const auto theta = server.theta.data();
  for (std::size_t i = 0; i < avg.size(); ++i) avg[i] = (avg[i] * n + theta[i]) / (n + 1.0);
  ++server.n_models;
}

bool is_cycle_boundary(std::size_t round, const SwaConfig& swa) {
  if (!swa.enabled || round < swa.start_round) return false;
  const std::size_t c = swa.schedule.cycle;
  return (round - swa.start_round) % c == c - 1;
}

Evaluation evaluate(std::span<const double> theta, const ModelSpec& model, const Dataset& data,
                    const ChannelStats& normalization) {
  if (data.size() == 0) throw UsageError("evaluate: empty dataset");
  constexpr std::size_t chunk = 512;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Batch batch = make_batch(data, idx);
    if (!normalization.mean.empty() && batch.inputs.rank() == 4) {
      batch = map_images(batch, [&](const Tensor& img) { return normalize(img, normalization); });
    }
    const ForwardPass pass = forward_loss(theta, model, batch);
    loss_sum += pass.loss_value() * static_cast<double>(batch.size());
    const Tensor& logits = pass.tape.value(pass.logits);
    const std::size_t k = model.num_classes;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double* row = &logits.data()[i * k];
      const auto pred = static_cast<int>(std::max_element(row, row + k) - row);
      if (pred == data.labels[start + i]) ++correct;
    }
  }
  const double n = static_cast<double>(data.size());
  return Evaluation{static_cast<double>(correct) / n, loss_sum / n};
}

RoundMetrics run_round(ServerState& server, const FederatedTask& task, const FedConfig& cfg,
                       std::vector<ClientUpdate>* updates_out) {
  const std::size_t t = server.round + 1;
  RoundMetrics metrics{.round = t, .lr = round_lr(t, cfg)};
  const std::vector<std::size_t> ids =
      sample_clients(task.shards.size(), cfg.clients_per_round, t, cfg.seed);

  std::vector<ClientUpdate> updates(ids.size());
  auto train_one = [&](std::size_t slot) {
    const ClientShard& shard = task.shards[ids[slot]];
    if (shard.client_id != ids[slot]) throw UsageError("run_round: shards must be indexed by client id");
    updates[slot] = local_train(server.theta, task.model, task.train, shard, cfg, t, metrics.lr);
  };
  const std::size_t workers = std::min(cfg.workers, ids.size());
  if (workers <= 1) {
    for (std::size_t s = 0; s < ids.size(); ++s) train_one(s);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t s = w; s < ids.size(); s += workers) train_one(s);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  double loss_sum = 0.0;
  for (const auto& u : updates) loss_sum += u.train_loss;
  metrics.mean_client_train_loss = loss_sum / static_cast<double>(updates.size());

  const ParamVector aggregate = fedavg_aggregate(updates);
  fedavgm_update(server, aggregate, cfg.server.momentum, cfg.server.lr);
  if (cfg.swa.report && is_cycle_boundary(t, cfg.swa)) swa_absorb(server);
  server.round = t;
  if (updates_out != nullptr) *updates_out = std::move(updates);

  if (task.test != nullptr) {
    const auto& norm = cfg.augment.normalization;
    metrics.test_acc_sgd = evaluate(server.theta.data(), task.model, *task.test, norm).accuracy;
    if (cfg.swa.enabled && cfg.swa.report && server.n_models > 0) {
      metrics.test_acc_swa = evaluate(server.swa_theta.data(), task.model, *task.test, norm).accuracy;
    }
  }
  return metrics;
}

}  // namespace fedflat
