#include "fednids/fedcore.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <future>

#include <nlohmann/json.hpp>

#include "fednids/random.hpp"

namespace fednids {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::FedAvg: return "fedavg";
    case Strategy::FedAvgM: return "fedavgm";
    case Strategy::FedAdagrad: return "fedadagrad";
    case Strategy::FedYogi: return "fedyogi";
    case Strategy::FedAdam: return "fedadam";
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& s) {
  std::string lower;
  for (char c : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (Strategy st : kAllStrategies) {
    if (to_string(st) == lower) return st;
  }
  throw FederationError("unknown strategy '" + s + "'");
}

ServerState ServerState::make(AeParams initial, Strategy strategy, StrategyConfig config) {
  ServerState s;
  const Index n = initial.flat().size();
  s.global = std::move(initial);
  s.strategy = strategy;
  s.config = config;
  s.momentum = Vector::Zero(n);
  s.m = Vector::Zero(n);
  s.v = Vector::Constant(n, config.tau * config.tau);
  return s;
}

Vector aggregate_fedavg(const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) throw FederationError("no client updates to aggregate");
  const Vector& ref = updates.front().params;
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.params.size() != ref.size()) throw FederationError("client updates differ in length");
    if (u.n_samples == 0) throw FederationError("client update with zero samples");
    total += static_cast<double>(u.n_samples);
  }
  // Averaging offsets from the first update keeps identical updates (and a
  // single client) bit-exact.
  Vector acc = Vector::Zero(ref.size());
  for (std::size_t k = 1; k < updates.size(); ++k) {
    acc += (static_cast<double>(updates[k].n_samples) / total) * (updates[k].params - ref);
  }
  return ref + acc;
}

namespace {
void check_server(const ServerState& server, const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) throw FederationError("no client updates to aggregate");
  if (updates.front().params.size() != server.global.flat().size()) {
    throw FederationError("client update length does not match the global model");
  }
}
}  // namespace

Vector aggregate_fedavgm(ServerState& server, const std::vector<ClientUpdate>& updates) {
  check_server(server, updates);
  const Vector& x = server.global.flat();
  const Vector delta = x - aggregate_fedavg(updates);
  server.momentum = server.config.avgm_momentum * server.momentum + delta;
  return x - server.config.avgm_lr * server.momentum;
}

Vector aggregate_fedopt(FedOptVariant variant, ServerState& server,
                        const std::vector<ClientUpdate>& updates) {
  check_server(server, updates);
  const auto& c = server.config;
  const Vector& x = server.global.flat();
  const Vector delta = aggregate_fedavg(updates) - x;
  const Vector d2 = delta.cwiseProduct(delta);
  server.m = c.beta1 * server.m + (1.0 - c.beta1) * delta;
  switch (variant) {
    case FedOptVariant::Adagrad:
      server.v += d2;
      break;
    case FedOptVariant::Adam:
      server.v = c.beta2 * server.v + (1.0 - c.beta2) * d2;
      break;
    case FedOptVariant::Yogi: {
      const Vector diff = server.v - d2;
      const Vector sign = diff.unaryExpr([](double z) { return static_cast<double>((z > 0.0) - (z < 0.0)); });
      server.v -= (1.0 - c.beta2) * d2.cwiseProduct(sign);
      break;
    }
    default:
      throw FederationError("unknown FedOpt variant");
  }
  return (x.array() + c.opt_lr * server.m.array() / (server.v.array().sqrt() + c.tau)).matrix();
}

const AeParams& server_step(ServerState& server, const std::vector<ClientUpdate>& updates) {
  Vector next;
  switch (server.strategy) {
    case Strategy::FedAvg: next = aggregate_fedavg(updates); break;
    case Strategy::FedAvgM: next = aggregate_fedavgm(server, updates); break;
    case Strategy::FedAdagrad: next = aggregate_fedopt(FedOptVariant::Adagrad, server, updates); break;
    case Strategy::FedYogi: next = aggregate_fedopt(FedOptVariant::Yogi, server, updates); break;
    case Strategy::FedAdam: next = aggregate_fedopt(FedOptVariant::Adam, server, updates); break;
  }
  server.global = set_parameters(server.global, next);
  ++server.round;
  return server.global;
}

ClientState prepare_client(const FlowDataset& silo, const PipelineConfig& cfg, std::uint64_t seed) {
  ClientState c;
  c.name = silo.provenance().silo;
  c.seed = seed;
  c.train = cfg.train;
  c.mode = cfg.mode;
  c.baseline_quantile = cfg.baseline_quantile;

  auto [train, test] = split_train_test(silo, cfg.test_fraction, mix_seed(seed, 1));
  c.raw_test = test;
  if (cfg.stacking) {
    const FlowDataset benign = partition_validation_by_label(train).first;
    try {
      c.efc = fit_efc(benign, cfg.efc, &train.features());
    } catch (const EfcError& e) {
      throw FederationError("client " + c.name + ": " + e.what());
    }
    train = stack_feature(train, predict(*c.efc, train));
    test = stack_feature(test, predict(*c.efc, test));
  }
  auto [fit, val] = split_train_val(train, cfg.val_fraction, mix_seed(seed, 2));
  std::tie(c.val_benign, c.val_attack) = partition_validation_by_label(val);
  if (c.val_benign.empty()) {
    throw FederationError("client " + c.name + ": validation split holds no benign rows");
  }
  if (!c.baseline_quantile && c.mode == DetectionMode::DualThreshold && c.val_attack.empty()) {
    throw FederationError("client " + c.name +
                          ": validation split holds no attack rows; use benign-only mode");
  }
  c.split = SplitBundle{std::move(fit), std::move(val), std::move(test), seed};
  return c;
}

ClientUpdate client_fit(const AeParams& global, const ClientState& client, int round) {
  if (global.input_dim() != client.input_dim()) {
    throw FederationError("client " + client.name + " input dimension " +
                          std::to_string(client.input_dim()) + " does not match the global model");
  }
  TrainConfig cfg = client.train;
  cfg.seed = mix_seed(client.seed, 1000 + static_cast<std::uint64_t>(round));
  TrainResult r = train_epochs(global, client.split.train, cfg);
  return {r.params.flat(), static_cast<std::uint64_t>(client.split.train.rows())};
}

ThresholdPair client_thresholds(const AeParams& global, const ClientState& client) {
  ThresholdPair th = client.baseline_quantile
                         ? quantile_threshold(global, client.split.validation, *client.baseline_quantile)
                         : compute_thresholds(global, client.val_benign, &client.val_attack, client.mode);
  th.client = client.name;
  return th;
}

ClientEvaluation evaluate_with(const AeParams& params, const ThresholdPair& th, DetectionMode mode,
                               const FlowDataset& test) {
  ClientEvaluation e;
  e.thresholds = th;
  e.scores = score_dataset(params, test);
  e.predicted = classify_all(e.scores, th, mode);
  e.actual = test.labels();
  e.row_ids = test.row_ids();
  e.metrics = evaluate(e.scores, e.actual, e.predicted);
  return e;
}

ClientEvaluation client_evaluate(const AeParams& global, const ClientState& client, int round) {
  ThresholdPair th = client_thresholds(global, client);
  th.round = round;
  const DetectionMode mode = client.baseline_quantile ? DetectionMode::BenignOnly : client.mode;
  return evaluate_with(global, th, mode, client.split.test);
}

RoundAverages average_metrics(const std::vector<MetricsReport>& reports) {
  RoundAverages a;
  if (reports.empty()) return a;
  double auc_sum = 0.0;
  int auc_n = 0;
  for (const auto& r : reports) {
    a.accuracy += r.accuracy;
    a.precision += r.precision;
    a.recall += r.recall;
    a.f1 += r.f1;
    a.missrate_paper += r.missrate_paper;
    a.fnr_standard += r.fnr_standard;
    a.fallout += r.fallout;
    if (r.auc) {
      auc_sum += *r.auc;
      ++auc_n;
    }
  }
  const double n = static_cast<double>(reports.size());
  a.accuracy /= n;
  a.precision /= n;
  a.recall /= n;
  a.f1 /= n;
  a.missrate_paper /= n;
  a.fnr_standard /= n;
  a.fallout /= n;
  if (auc_n > 0) a.auc = auc_sum / auc_n;
  return a;
}

std::string parameter_digest(const Vector& flat) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (Index i = 0; i < flat.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(flat(i));
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<RoundReport> run_simulation(const std::vector<ClientState>& clients, ServerState& server,
                                        const SimulationOptions& options) {
  if (clients.empty()) throw FederationError("simulation needs at least one client");
  if (options.rounds < 1) throw FederationError("simulation needs at least one round");
  for (const auto& c : clients) {
    if (c.input_dim() != server.global.input_dim()) {
      throw FederationError("client " + c.name + " has input dimension " +
                            std::to_string(c.input_dim()) + ", server model expects " +
                            std::to_string(server.global.input_dim()));
    }
  }
  const std::size_t warm_n = options.warmup_clients > 0
                                 ? std::min(options.warmup_clients, clients.size())
                                 : (clients.size() + 1) / 2;

  std::vector<RoundReport> reports;
  for (int r = 1; r <= options.rounds; ++r) {
    const std::size_t active = r <= options.warmup_rounds ? warm_n : clients.size();
    const AeParams broadcast = server.global;

    std::vector<ClientUpdate> updates(active);
    if (options.parallel_clients && active > 1) {
      std::vector<std::future<ClientUpdate>> jobs;
      for (std::size_t k = 0; k < active; ++k) {
        jobs.push_back(std::async(std::launch::async,
                                  [&, k] { return client_fit(broadcast, clients[k], r); }));
      }
      for (std::size_t k = 0; k < active; ++k) updates[k] = jobs[k].get();
    } else {
      for (std::size_t k = 0; k < active; ++k) updates[k] = client_fit(broadcast, clients[k], r);
    }
    const AeParams& global = server_step(server, updates);

    RoundReport report;
    report.round = r;
    report.strategy = server.strategy;
    report.mode = clients.front().mode;
    report.global_digest = parameter_digest(global.flat());
    std::vector<MetricsReport> metrics;
    for (std::size_t k = 0; k < clients.size(); ++k) {
      ClientEvaluation eval = client_evaluate(global, clients[k], r);
      ClientRound cr;
      cr.name = clients[k].name;
      cr.participated = k < active;
      cr.n_train = static_cast<std::uint64_t>(clients[k].split.train.rows());
      cr.thresholds = eval.thresholds;
      cr.metrics = eval.metrics;
      metrics.push_back(eval.metrics);
      if (options.keep_final_detail && r == options.rounds) cr.detail = std::move(eval);
      report.clients.push_back(std::move(cr));
    }
    report.average = average_metrics(metrics);
    reports.push_back(std::move(report));
  }
  return reports;
}

void to_json(nlohmann::json& j, const ThresholdPair& t) {
  j = nlohmann::json{{"t_benign", t.benign},
                     {"t_attack", t.attack ? nlohmann::json(*t.attack) : nlohmann::json(nullptr)},
                     {"inverted", t.inverted()}};
}

void to_json(nlohmann::json& j, const RoundAverages& a) {
  j = nlohmann::json{{"accuracy", a.accuracy},
                     {"precision", a.precision},
                     {"recall", a.recall},
                     {"f1", a.f1},
                     {"missrate_paper", a.missrate_paper},
                     {"fnr_standard", a.fnr_standard},
                     {"fallout", a.fallout},
                     {"auc", a.auc ? nlohmann::json(*a.auc) : nlohmann::json(nullptr)}};
}

void to_json(nlohmann::json& j, const RoundReport& r) {
  nlohmann::json clients = nlohmann::json::array();
  for (const auto& c : r.clients) {
    clients.push_back({{"name", c.name},
                       {"participated", c.participated},
                       {"n_train", c.n_train},
                       {"thresholds", c.thresholds},
                       {"metrics", c.metrics}});
  }
  j = nlohmann::json{{"round", r.round},
                     {"strategy", to_string(r.strategy)},
                     {"mode", to_string(r.mode)},
                     {"evaluated_model", "post-aggregation global"},
                     {"global_digest", r.global_digest},
                     {"average", r.average},
                     {"clients", std::move(clients)}};
}

}  // namespace fednids
