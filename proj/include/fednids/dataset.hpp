#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fednids/types.hpp"

namespace fednids {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Column roles for a NetFlow-style CSV. An empty feature_names list means
// "every column not claimed by another role".
struct FlowSchema {
  std::vector<std::string> feature_names;
  std::vector<std::string> identifier_columns{"IPV4_SRC_ADDR", "L4_SRC_PORT", "IPV4_DST_ADDR",
                                              "L4_DST_PORT"};
  std::string label_column{"Label"};
  std::vector<std::string> excluded_columns{"Attack", "Dataset"};

  bool has_feature(const std::string& name) const;
};

FlowSchema load_schema(const std::filesystem::path& path);
void save_schema(const FlowSchema& schema, const std::filesystem::path& path);

struct Provenance {
  std::string silo;
  std::string config_tag;
  bool inseparable = false;
  // Non-model columns (identifiers, attack names) carried along per row.
  std::map<std::string, std::vector<std::string>> metadata;
};

// Scaled flow features with binary labels (0 = benign, 1 = attack).
// Immutable after construction; every operation returns a new dataset.
class FlowDataset {
 public:
  FlowDataset() = default;
  FlowDataset(Matrix features, Labels labels, FlowSchema schema, Provenance provenance = {},
              std::vector<std::size_t> row_ids = {});

  const Matrix& features() const { return features_; }
  const Labels& labels() const { return labels_; }
  const FlowSchema& schema() const { return schema_; }
  const Provenance& provenance() const { return provenance_; }
  // Row index in the originating silo, preserved through splits and samples.
  const std::vector<std::size_t>& row_ids() const { return row_ids_; }

  Index rows() const { return features_.rows(); }
  Index cols() const { return features_.cols(); }
  bool empty() const { return rows() == 0; }

  std::size_t count_label(std::uint8_t label) const;

  FlowDataset select_rows(const std::vector<std::size_t>& indices) const;
  FlowDataset with_features(Matrix features, FlowSchema schema) const;
  FlowDataset with_provenance(Provenance provenance) const;

 private:
  Matrix features_;
  Labels labels_;
  FlowSchema schema_;
  Provenance provenance_;
  std::vector<std::size_t> row_ids_;
};

FlowDataset load_csv(const std::filesystem::path& path, const FlowSchema& schema,
                     const std::string& silo_name = {});

// Reads the CSV in chunks of chunk_rows (0 = whole file), handing each chunk
// to sink. Row ids stay global across chunks.
void stream_csv(const std::filesystem::path& path, const FlowSchema& schema,
                std::size_t chunk_rows, const std::function<void(FlowDataset)>& sink,
                const std::string& silo_name = {});

struct ScalerParams {
  std::vector<std::string> feature_names;
  Vector min;
  Vector max;
};

ScalerParams fit_minmax(const FlowDataset& ds);
FlowDataset apply_minmax(const FlowDataset& ds, const ScalerParams& sc);
// Widens acc to cover chunk (streaming fit).
void merge_minmax(ScalerParams& acc, const ScalerParams& chunk);

// (v - min) / (max - min), clamped to [0, 1]; constant features map to 0.
inline double minmax_value(double v, double lo, double hi) {
  if (!(hi > lo)) return 0.0;
  const double s = (v - lo) / (hi - lo);
  return s < 0.0 ? 0.0 : (s > 1.0 ? 1.0 : s);
}

// Size of the held-out side for a fractional split of n rows; the smaller
// partition is rounded half-up and both sides stay non-empty.
std::size_t holdout_size(std::size_t n, double fraction);

// Returns (kept, held_out) where held_out has holdout_size(n, fraction) rows.
std::pair<FlowDataset, FlowDataset> split_fraction(const FlowDataset& ds, double fraction,
                                                   std::uint64_t seed);

inline std::pair<FlowDataset, FlowDataset> split_train_test(const FlowDataset& ds,
                                                            double test_fraction,
                                                            std::uint64_t seed) {
  return split_fraction(ds, test_fraction, seed);
}

inline std::pair<FlowDataset, FlowDataset> split_train_val(const FlowDataset& train,
                                                           double val_fraction,
                                                           std::uint64_t seed) {
  return split_fraction(train, val_fraction, seed);
}

struct SplitBundle {
  FlowDataset train;
  FlowDataset validation;
  FlowDataset test;
  std::uint64_t seed = 0;
};

// (benign, attack) validation subsets.
std::pair<FlowDataset, FlowDataset> partition_validation_by_label(const FlowDataset& val);

FlowDataset sample_uniform(const FlowDataset& ds, std::size_t n, std::uint64_t seed);

// Axis-aligned Gaussian cluster, truncated to [0, 1].
struct ClusterParams {
  Vector mean;
  Vector spread;
};

struct SyntheticSiloSpec {
  std::string name;
  std::size_t n_samples = 0;
  double benign_fraction = 0.5;
  ClusterParams benign;
  ClusterParams attack;
  std::uint64_t seed = 0;

  Index n_features() const { return benign.mean.size(); }
};

std::vector<FlowDataset> generate_synthetic_silos(const std::vector<SyntheticSiloSpec>& specs);

// Columnar cache: magic "FNDS", version byte, u64 rows, u64 cols (little
// endian), row-major f64 features, then one label byte per row.
void save_cache(const FlowDataset& ds, const std::filesystem::path& path);

// Incremental cache writer for chunked preparation. Labels are buffered and
// the row count is patched into the header by finish().
class CacheWriter {
 public:
  CacheWriter(const std::filesystem::path& path, Index cols);
  ~CacheWriter();
  CacheWriter(const CacheWriter&) = delete;
  CacheWriter& operator=(const CacheWriter&) = delete;

  void append(const FlowDataset& chunk);
  void finish();

 private:
  std::filesystem::path path_;
  std::unique_ptr<std::ofstream> out_;
  Index cols_;
  std::uint64_t rows_ = 0;
  Labels labels_;
  bool finished_ = false;
};
FlowDataset load_cache(const std::filesystem::path& path, const FlowSchema& schema,
                       const std::string& silo_name = {});

}  // namespace fednids
