#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fednids/dataset.hpp"
#include "fednids/types.hpp"

namespace fednids {

class EfcError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kEfcColumn = "efc_prediction";

struct EfcConfig {
  int bins = 30;
  double pseudocount = 0.5;
  double quantile = 0.95;
  double ridge = 1e-6;
};

// Per-feature quantile binning. Bins are 0-based here; state count per
// feature is edges.size() + 1 and never exceeds the requested bin count.
struct Discretizer {
  int max_bins = 0;
  std::vector<std::vector<double>> edges;

  Index n_features() const { return static_cast<Index>(edges.size()); }
  int states(Index feature) const { return static_cast<int>(edges[feature].size()) + 1; }
  int bin(Index feature, double value) const;
};

Discretizer fit_discretizer(const Matrix& features, int bins);

// Inverse-Potts model in the last-state gauge: state q_i - 1 of every
// feature carries zero field and zero coupling, so only q_i - 1 slots per
// feature are stored. couplings is the symmetric (D x D) slot matrix.
struct EfcModel {
  EfcConfig config;
  std::vector<std::string> feature_names;
  Discretizer discretizer;
  std::vector<Index> offsets;
  Vector fields;
  Matrix couplings;
  double cutoff = 0.0;

  Index slots() const { return fields.size(); }
  // e_ij(a, b); zero when either state is the gauge state.
  double coupling(Index i, int a, Index j, int b) const;
  double field(Index i, int a) const;
};

// Bin edges come from `binning` when given (any unlabeled rows with the same
// columns, typically the whole training split), else from benign_train.
// Frequencies, couplings and the cutoff always use benign_train only.
EfcModel fit_efc(const FlowDataset& benign_train, const EfcConfig& config = {},
                 const Matrix* binning = nullptr);

double energy(const EfcModel& model, Eigen::Ref<const RowVector> row);
Vector energies(const EfcModel& model, const FlowDataset& ds);
// 1 (malicious) iff energy > cutoff.
Labels predict(const EfcModel& model, const FlowDataset& ds);

// Appends the prediction as the last feature column, named kEfcColumn.
FlowDataset stack_feature(const FlowDataset& ds, const Labels& preds);

// Nearest-rank quantile: smallest value with at least ceil(q * n) values <= it.
double nearest_rank_quantile(std::vector<double> values, double q);

void save_efc(const EfcModel& model, const std::filesystem::path& path);
EfcModel load_efc(const std::filesystem::path& path);

}  // namespace fednids
