#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fednids/fedcore.hpp"

namespace fednids {

// Where one silo's flows come from. Exactly one of csv / cache / synthetic.
struct SiloSource {
  std::string name;
  std::string csv;
  std::string cache;
  std::string schema;
  std::optional<SyntheticSiloSpec> synthetic;
};

// Expands to the four built-in silos with Table-3-like class skew.
struct SyntheticPreset {
  std::size_t rows = 10000;
  std::uint64_t seed = 7;
};

struct ExperimentConfig {
  std::vector<SiloSource> silos;
  std::optional<SyntheticPreset> synthetic_preset;
  std::string config_tag = "synthetic";  // original | sampled | reduced | synthetic
  std::optional<std::size_t> sample_size;
  Strategy strategy = Strategy::FedAvg;
  StrategyConfig strategy_config;
  int rounds = 10;
  DetectionMode mode = DetectionMode::DualThreshold;
  bool stacking = true;
  std::uint64_t seed = 42;
  EfcConfig efc;
  TrainConfig train;
  double baseline_quantile = 0.95;
  int warmup_rounds = 0;
  bool parallel_clients = false;
  bool export_energy = false;
  std::string output_dir = "results";

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

// Loads, samples and min-max scales every configured silo.
std::vector<FlowDataset> load_silos(const ExperimentConfig& cfg);

PipelineConfig pipeline_config(const ExperimentConfig& cfg, bool baseline_threshold);
std::uint64_t client_seed(const ExperimentConfig& cfg, std::size_t silo_index);
AeParams initial_params(const ExperimentConfig& cfg, Index input_dim);

struct SiloEvaluation {
  std::string name;
  ClientEvaluation eval;
  std::optional<Vector> efc_energy;  // diagnostic, when export_energy is on
};

struct LocalResult {
  std::vector<SiloEvaluation> silos;
  std::vector<AeParams> models;
  RoundAverages average;
  double f1_stddev = 0.0;
  Index input_dim = 0;
};

struct CrossResult {
  std::vector<std::string> names;
  // cells[train][test]; the diagonal holds the local evaluation.
  std::vector<std::vector<MetricsReport>> cells;
  double average_cross_f1 = 0.0;
  double stddev_cross_f1 = 0.0;
  double average_local_f1 = 0.0;
  std::size_t cross_evaluations = 0;
};

struct FederatedResult {
  std::vector<RoundReport> rounds;
  AeParams final_global;
  std::vector<ClientState> clients;
};

LocalResult run_local(const ExperimentConfig& cfg, const std::vector<FlowDataset>& silos);
CrossResult run_cross(const ExperimentConfig& cfg, const std::vector<FlowDataset>& silos);
FederatedResult run_federated(const ExperimentConfig& cfg, const std::vector<FlowDataset>& silos);

// Re-scores the final global model of a federated run under another mode.
RoundAverages reevaluate(const FederatedResult& fed, DetectionMode mode);

// Writers return the files they created. JSON output carries no timestamps,
// so identical seeds give byte-identical files.
std::vector<std::filesystem::path> write_local_report(const LocalResult& r, const ExperimentConfig& cfg,
                                                      const std::filesystem::path& dir);
std::vector<std::filesystem::path> write_cross_report(const CrossResult& r, const ExperimentConfig& cfg,
                                                      const std::filesystem::path& dir);
std::vector<std::filesystem::path> write_federated_report(const FederatedResult& r,
                                                          const ExperimentConfig& cfg,
                                                          const std::filesystem::path& dir);

// Misclassified test rows only: row, loss, predicted, actual.
void write_misclassified_csv(const ClientEvaluation& eval, const std::filesystem::path& path);

// Streams a CSV through a two-pass min-max scaler into the columnar cache;
// memory stays bounded by chunk_rows. Returns the fitted scaler.
ScalerParams prepare_streaming(const std::filesystem::path& csv, const FlowSchema& schema,
                               const std::filesystem::path& cache, std::size_t chunk_rows);

// Built-in synthetic silos patterned on the sampled NetFlow class skews.
std::vector<SyntheticSiloSpec> table3_synthetic_specs(std::size_t rows, std::uint64_t seed);

void write_csv(const FlowDataset& ds, const std::filesystem::path& path);

}  // namespace fednids
