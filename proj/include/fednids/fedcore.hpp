#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fednids/autoencoder.hpp"
#include "fednids/dataset.hpp"
#include "fednids/detector.hpp"
#include "fednids/efc.hpp"
#include "fednids/metrics.hpp"

namespace fednids {

class FederationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Strategy { FedAvg, FedAvgM, FedAdagrad, FedYogi, FedAdam };
enum class FedOptVariant { Adagrad, Adam, Yogi };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);
inline constexpr Strategy kAllStrategies[] = {Strategy::FedAvg, Strategy::FedAvgM, Strategy::FedAdagrad,
                                              Strategy::FedYogi, Strategy::FedAdam};

struct StrategyConfig {
  double avgm_lr = 1.0;        // FedAvgM server learning rate
  double avgm_momentum = 0.9;  // FedAvgM momentum
  double opt_lr = 0.1;         // FedOpt server learning rate
  double beta1 = 0.9;
  double beta2 = 0.99;
  double tau = 1e-9;
};

struct ClientUpdate {
  Vector params;
  std::uint64_t n_samples = 0;
};

struct ServerState {
  AeParams global;
  Strategy strategy = Strategy::FedAvg;
  StrategyConfig config;
  Vector momentum;  // FedAvgM
  Vector m;         // FedOpt first moment
  Vector v;         // FedOpt second moment
  int round = 0;

  static ServerState make(AeParams initial, Strategy strategy, StrategyConfig config = {});
};

// Sample-size weighted coordinate-wise mean.
Vector aggregate_fedavg(const std::vector<ClientUpdate>& updates);
// delta = x - avg; v = beta * v + delta; x = x - lr * v.
Vector aggregate_fedavgm(ServerState& server, const std::vector<ClientUpdate>& updates);
// delta = avg - x; m = b1 m + (1 - b1) delta; variant-specific v;
// x = x + lr * m / (sqrt(v) + tau).
Vector aggregate_fedopt(FedOptVariant variant, ServerState& server,
                        const std::vector<ClientUpdate>& updates);
// Applies the server's strategy, installs the new global and bumps the round.
const AeParams& server_step(ServerState& server, const std::vector<ClientUpdate>& updates);

// Fixed pipeline knobs shared by every client of an experiment.
struct PipelineConfig {
  bool stacking = true;
  EfcConfig efc;
  TrainConfig train;
  DetectionMode mode = DetectionMode::DualThreshold;
  double test_fraction = 0.2;
  double val_fraction = 0.1;
  // When set, thresholds are the q-quantile of all validation losses
  // (baseline autoencoder) instead of the benign/attack means.
  std::optional<double> baseline_quantile;
};

struct ClientState {
  std::string name;
  SplitBundle split;  // stacked when stacking is on
  FlowDataset raw_test;  // test split before stacking
  FlowDataset val_benign;
  FlowDataset val_attack;
  std::optional<EfcModel> efc;
  TrainConfig train;
  DetectionMode mode = DetectionMode::DualThreshold;
  std::optional<double> baseline_quantile;
  std::uint64_t seed = 0;

  Index input_dim() const { return split.train.cols(); }
};

// Scaled silo -> 80/20 split -> EFC on benign train rows, stacked onto
// train and test -> 90/10 train/validation -> benign/attack validation.
ClientState prepare_client(const FlowDataset& silo, const PipelineConfig& cfg, std::uint64_t seed);

ClientUpdate client_fit(const AeParams& global, const ClientState& client, int round);

struct ClientEvaluation {
  ThresholdPair thresholds;
  MetricsReport metrics;
  Vector scores;
  Labels predicted;
  Labels actual;
  std::vector<std::size_t> row_ids;
};

ThresholdPair client_thresholds(const AeParams& global, const ClientState& client);
// Scores an arbitrary (already stacked) test set with the client's thresholds.
ClientEvaluation evaluate_with(const AeParams& params, const ThresholdPair& th, DetectionMode mode,
                               const FlowDataset& test);
ClientEvaluation client_evaluate(const AeParams& global, const ClientState& client, int round = 0);

struct ClientRound {
  std::string name;
  bool participated = true;
  std::uint64_t n_train = 0;
  ThresholdPair thresholds;
  MetricsReport metrics;
  // Per-sample detail, kept for the final round only.
  std::optional<ClientEvaluation> detail;
};

struct RoundAverages {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double missrate_paper = 0.0;
  double fnr_standard = 0.0;
  double fallout = 0.0;
  std::optional<double> auc;
};

RoundAverages average_metrics(const std::vector<MetricsReport>& reports);

struct RoundReport {
  int round = 0;
  Strategy strategy = Strategy::FedAvg;
  DetectionMode mode = DetectionMode::DualThreshold;
  std::vector<ClientRound> clients;
  RoundAverages average;
  std::string global_digest;
};

struct SimulationOptions {
  int rounds = 10;
  // During the first warmup_rounds only warmup_clients clients train
  // (0 = half of them, rounded up).
  int warmup_rounds = 0;
  std::size_t warmup_clients = 0;
  bool parallel_clients = false;
  bool keep_final_detail = true;
};

std::vector<RoundReport> run_simulation(const std::vector<ClientState>& clients, ServerState& server,
                                        const SimulationOptions& options);

// FNV-1a over the little-endian bytes of the flat vector.
std::string parameter_digest(const Vector& flat);

void to_json(nlohmann::json& j, const ThresholdPair& t);
void to_json(nlohmann::json& j, const RoundAverages& a);
void to_json(nlohmann::json& j, const RoundReport& r);

}  // namespace fednids
