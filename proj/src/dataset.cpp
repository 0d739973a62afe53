#include "fednids/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <optional>
#include <set>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "csv.hpp"
#include "fednids/random.hpp"

namespace fednids {

using nlohmann::json;

bool FlowSchema::has_feature(const std::string& name) const {
  return std::find(feature_names.begin(), feature_names.end(), name) != feature_names.end();
}

FlowSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open schema file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DatasetError("malformed schema file " + path.string() + ": " + e.what());
  }
  FlowSchema s;
  s.feature_names = j.value("features", std::vector<std::string>{});
  s.identifier_columns = j.value("identifiers", s.identifier_columns);
  s.label_column = j.value("label", s.label_column);
  s.excluded_columns = j.value("excluded", s.excluded_columns);
  return s;
}

void save_schema(const FlowSchema& schema, const std::filesystem::path& path) {
  json j{{"features", schema.feature_names},
         {"identifiers", schema.identifier_columns},
         {"label", schema.label_column},
         {"excluded", schema.excluded_columns}};
  std::ofstream out(path);
  if (!out) throw DatasetError("cannot write schema file " + path.string());
  out << j.dump(2) << '\n';
}

FlowDataset::FlowDataset(Matrix features, Labels labels, FlowSchema schema, Provenance provenance,
                         std::vector<std::size_t> row_ids)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      schema_(std::move(schema)),
      provenance_(std::move(provenance)),
      row_ids_(std::move(row_ids)) {
  const auto n = static_cast<std::size_t>(features_.rows());
  if (labels_.size() != n) {
    throw DatasetError("label count " + std::to_string(labels_.size()) + " != row count " +
                       std::to_string(n));
  }
  if (schema_.feature_names.size() != static_cast<std::size_t>(features_.cols())) {
    throw DatasetError("schema lists " + std::to_string(schema_.feature_names.size()) +
                       " features but matrix has " + std::to_string(features_.cols()));
  }
  if (row_ids_.empty() && n > 0) {
    row_ids_.resize(n);
    for (std::size_t i = 0; i < n; ++i) row_ids_[i] = i;
  } else if (row_ids_.size() != n) {
    throw DatasetError("row id count does not match row count");
  }
  for (const auto& [name, values] : provenance_.metadata) {
    if (values.size() != n) throw DatasetError("metadata column " + name + " has wrong length");
  }
}

std::size_t FlowDataset::count_label(std::uint8_t label) const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), label));
}

FlowDataset FlowDataset::select_rows(const std::vector<std::size_t>& indices) const {
  Matrix f(static_cast<Index>(indices.size()), cols());
  Labels l(indices.size());
  std::vector<std::size_t> ids(indices.size());
  Provenance prov = provenance_;
  for (auto& [name, values] : prov.metadata) {
    std::vector<std::string> picked(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) picked[k] = values[indices[k]];
    values = std::move(picked);
  }
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto r = indices[k];
    if (r >= static_cast<std::size_t>(rows())) throw DatasetError("row index out of range");
    f.row(static_cast<Index>(k)) = features_.row(static_cast<Index>(r));
    l[k] = labels_[r];
    ids[k] = row_ids_[r];
  }
  return FlowDataset(std::move(f), std::move(l), schema_, std::move(prov), std::move(ids));
}

FlowDataset FlowDataset::with_features(Matrix features, FlowSchema schema) const {
  return FlowDataset(std::move(features), labels_, std::move(schema), provenance_, row_ids_);
}

FlowDataset FlowDataset::with_provenance(Provenance provenance) const {
  return FlowDataset(features_, labels_, schema_, std::move(provenance), row_ids_);
}

namespace {

struct ColumnPlan {
  std::vector<std::size_t> feature_idx;
  std::vector<std::string> feature_names;
  std::vector<std::pair<std::string, std::size_t>> metadata_idx;
  std::size_t label_idx = 0;
  std::size_t width = 0;
};

ColumnPlan plan_columns(const std::vector<std::string>& header, const FlowSchema& schema) {
  ColumnPlan plan;
  plan.width = header.size();
  auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (csv::trim(header[i]) == name) return i;
    }
    return std::nullopt;
  };
  const auto label = find(schema.label_column);
  if (!label) throw DatasetError("schema error: missing label column '" + schema.label_column + "'");
  plan.label_idx = *label;

  std::set<std::string> reserved{schema.label_column};
  for (const auto& c : schema.identifier_columns) reserved.insert(c);
  for (const auto& c : schema.excluded_columns) reserved.insert(c);
  for (const auto& c : schema.feature_names) {
    if (reserved.count(c)) {
      throw DatasetError("schema error: column '" + c + "' is both a feature and a reserved column");
    }
  }

  if (schema.feature_names.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      std::string name(csv::trim(header[i]));
      if (!reserved.count(name)) {
        plan.feature_idx.push_back(i);
        plan.feature_names.push_back(std::move(name));
      }
    }
  } else {
    for (const auto& name : schema.feature_names) {
      const auto idx = find(name);
      if (!idx) throw DatasetError("schema error: missing feature column '" + name + "'");
      plan.feature_idx.push_back(*idx);
      plan.feature_names.push_back(name);
    }
  }
  if (plan.feature_idx.empty()) throw DatasetError("schema error: no feature columns");

  for (const auto* group : {&schema.identifier_columns, &schema.excluded_columns}) {
    for (const auto& name : *group) {
      if (const auto idx = find(name)) plan.metadata_idx.emplace_back(name, *idx);
    }
  }
  return plan;
}

FlowSchema resolved_schema(const FlowSchema& schema, const ColumnPlan& plan) {
  FlowSchema out = schema;
  out.feature_names = plan.feature_names;
  return out;
}

// Parses one data row into the chunk buffers; row_no is 1-based over data rows.
void parse_row(const std::vector<std::string>& fields, const ColumnPlan& plan, std::size_t row_no,
               std::vector<double>& values, Labels& labels,
               std::map<std::string, std::vector<std::string>>& metadata) {
  if (fields.size() != plan.width) {
    throw DatasetError("parse error: row " + std::to_string(row_no) + " has " +
                       std::to_string(fields.size()) + " fields, expected " +
                       std::to_string(plan.width));
  }
  for (std::size_t k = 0; k < plan.feature_idx.size(); ++k) {
    const auto v = csv::parse_double(fields[plan.feature_idx[k]]);
    if (!v || !std::isfinite(*v)) {
      throw DatasetError("parse error: row " + std::to_string(row_no) + ", column '" +
                         plan.feature_names[k] + "': non-numeric value '" +
                         fields[plan.feature_idx[k]] + "'");
    }
    values.push_back(*v);
  }
  const auto lab = csv::parse_double(fields[plan.label_idx]);
  if (!lab || (*lab != 0.0 && *lab != 1.0)) {
    throw DatasetError("label error: row " + std::to_string(row_no) + " has label '" +
                       fields[plan.label_idx] + "' (expected 0 or 1)");
  }
  labels.push_back(static_cast<std::uint8_t>(*lab));
  for (const auto& [name, idx] : plan.metadata_idx) metadata[name].push_back(fields[idx]);
}

FlowDataset build_chunk(std::vector<double>& values, Labels& labels,
                        std::map<std::string, std::vector<std::string>>& metadata,
                        std::vector<std::size_t>& ids, const FlowSchema& schema,
                        const std::string& silo) {
  const auto n = static_cast<Index>(labels.size());
  const auto d = static_cast<Index>(schema.feature_names.size());
  Matrix f = Eigen::Map<const Matrix>(values.data(), n, d);
  Provenance prov;
  prov.silo = silo;
  prov.metadata = std::move(metadata);
  FlowDataset ds(std::move(f), std::move(labels), schema, std::move(prov), std::move(ids));
  values.clear();
  labels.clear();
  metadata.clear();
  ids.clear();
  return ds;
}

}  // namespace

FlowDataset load_csv(const std::filesystem::path& path, const FlowSchema& schema,
                     const std::string& silo_name) {
  std::optional<FlowDataset> out;
  stream_csv(path, schema, 0, [&](FlowDataset chunk) { out = std::move(chunk); }, silo_name);
  return std::move(*out);
}

void stream_csv(const std::filesystem::path& path, const FlowSchema& schema,
                std::size_t chunk_rows, const std::function<void(FlowDataset)>& sink,
                const std::string& silo_name) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open CSV file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DatasetError("empty CSV file " + path.string());
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const ColumnPlan plan = plan_columns(csv::split_line(line), schema);
  const FlowSchema out_schema = resolved_schema(schema, plan);
  const std::string silo = silo_name.empty() ? path.stem().string() : silo_name;

  std::vector<double> values;
  Labels labels;
  std::map<std::string, std::vector<std::string>> metadata;
  std::vector<std::size_t> ids;
  std::size_t row_no = 0;
  bool emitted = false;
  while (std::getline(in, line)) {
    if (csv::trim(line).empty() || line == "\r") continue;
    ++row_no;
    parse_row(csv::split_line(line), plan, row_no, values, labels, metadata);
    ids.push_back(row_no - 1);
    if (chunk_rows > 0 && labels.size() >= chunk_rows) {
      sink(build_chunk(values, labels, metadata, ids, out_schema, silo));
      emitted = true;
    }
  }
  if (!labels.empty() || !emitted) sink(build_chunk(values, labels, metadata, ids, out_schema, silo));
}

ScalerParams fit_minmax(const FlowDataset& ds) {
  if (ds.empty()) throw DatasetError("cannot fit min-max scaler on an empty dataset");
  ScalerParams sc;
  sc.feature_names = ds.schema().feature_names;
  sc.min = ds.features().colwise().minCoeff().transpose();
  sc.max = ds.features().colwise().maxCoeff().transpose();
  return sc;
}

void merge_minmax(ScalerParams& acc, const ScalerParams& chunk) {
  if (acc.feature_names.empty()) {
    acc = chunk;
    return;
  }
  if (acc.feature_names != chunk.feature_names) throw DatasetError("scaler schema mismatch");
  acc.min = acc.min.cwiseMin(chunk.min);
  acc.max = acc.max.cwiseMax(chunk.max);
}

FlowDataset apply_minmax(const FlowDataset& ds, const ScalerParams& sc) {
  if (sc.feature_names != ds.schema().feature_names) {
    throw DatasetError("scaler schema mismatch: scaler fitted on different features");
  }
  Matrix f = ds.features();
  for (Index j = 0; j < f.cols(); ++j) {
    for (Index i = 0; i < f.rows(); ++i) f(i, j) = minmax_value(f(i, j), sc.min(j), sc.max(j));
  }
  return ds.with_features(std::move(f), ds.schema());
}

std::size_t holdout_size(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw DatasetError("split fraction must be in (0, 1)");
  if (n < 2) throw DatasetError("cannot split fewer than 2 rows");
  const double small_frac = std::min(fraction, 1.0 - fraction);
  auto small = static_cast<std::size_t>(std::floor(static_cast<double>(n) * small_frac + 0.5));
  small = std::clamp<std::size_t>(small, 1, n - 1);
  return fraction <= 0.5 ? small : n - small;
}

std::pair<FlowDataset, FlowDataset> split_fraction(const FlowDataset& ds, double fraction,
                                                   std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(ds.rows());
  const std::size_t held = holdout_size(n, fraction);
  const auto perm = permutation(n, seed);
  std::vector<std::size_t> held_idx(perm.begin(), perm.begin() + static_cast<long>(held));
  std::vector<std::size_t> kept_idx(perm.begin() + static_cast<long>(held), perm.end());
  return {ds.select_rows(kept_idx), ds.select_rows(held_idx)};
}

std::pair<FlowDataset, FlowDataset> partition_validation_by_label(const FlowDataset& val) {
  std::vector<std::size_t> benign, attack;
  for (std::size_t i = 0; i < val.labels().size(); ++i) {
    (val.labels()[i] == 0 ? benign : attack).push_back(i);
  }
  return {val.select_rows(benign), val.select_rows(attack)};
}

FlowDataset sample_uniform(const FlowDataset& ds, std::size_t n, std::uint64_t seed) {
  const auto total = static_cast<std::size_t>(ds.rows());
  if (n > total) {
    throw DatasetError("cannot sample " + std::to_string(n) + " rows from " +
                       std::to_string(total));
  }
  auto perm = permutation(total, seed);
  perm.resize(n);
  return ds.select_rows(perm);
}

namespace {

double truncated_normal(Rng& rng, double mean, double spread) {
  if (!(spread > 0.0)) return std::clamp(mean, 0.0, 1.0);
  std::normal_distribution<double> dist(mean, spread);
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double v = dist(rng);
    if (v >= 0.0 && v <= 1.0) return v;
  }
  return std::clamp(dist(rng), 0.0, 1.0);
}

void check_cluster(const ClusterParams& c, Index d, const std::string& silo) {
  if (c.mean.size() != d || c.spread.size() != d) {
    throw DatasetError("synthetic silo " + silo + ": cluster dimension mismatch");
  }
  if ((c.spread.array() < 0.0).any()) {
    throw DatasetError("synthetic silo " + silo + ": negative spread");
  }
}

}  // namespace

std::vector<FlowDataset> generate_synthetic_silos(const std::vector<SyntheticSiloSpec>& specs) {
  if (specs.empty()) throw DatasetError("no synthetic silo specs given");
  std::vector<FlowDataset> out;
  out.reserve(specs.size());
  for (const auto& spec : specs) {
    const Index d = spec.n_features();
    if (d < 2) throw DatasetError("synthetic silo " + spec.name + ": need at least 2 features");
    if (!(spec.benign_fraction > 0.0 && spec.benign_fraction < 1.0)) {
      throw DatasetError("synthetic silo " + spec.name + ": benign_fraction must be in (0, 1)");
    }
    check_cluster(spec.benign, d, spec.name);
    check_cluster(spec.attack, d, spec.name);

    const auto n = spec.n_samples;
    const auto n_benign = static_cast<std::size_t>(
        std::floor(static_cast<double>(n) * spec.benign_fraction + 0.5));
    Rng rng(spec.seed);
    Matrix f(static_cast<Index>(n), d);
    Labels labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      const bool benign = i < n_benign;
      const ClusterParams& c = benign ? spec.benign : spec.attack;
      for (Index j = 0; j < d; ++j) f(static_cast<Index>(i), j) = truncated_normal(rng, c.mean(j), c.spread(j));
      labels[i] = benign ? 0 : 1;
    }

    FlowSchema schema;
    schema.identifier_columns.clear();
    schema.excluded_columns.clear();
    for (Index j = 0; j < d; ++j) schema.feature_names.push_back("f" + std::to_string(j));
    Provenance prov;
    prov.silo = spec.name;
    prov.config_tag = "synthetic";
    prov.inseparable = spec.benign.mean == spec.attack.mean && spec.benign.spread == spec.attack.spread;

    FlowDataset ordered(std::move(f), std::move(labels), std::move(schema), std::move(prov));
    const auto perm = permutation(n, mix_seed(spec.seed, 1));
    FlowDataset shuffled = ordered.select_rows(perm);
    // Row ids restart at 0 in generation order of the shuffled silo.
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
    out.emplace_back(shuffled.features(), shuffled.labels(), shuffled.schema(),
                     shuffled.provenance(), std::move(ids));
  }
  return out;
}

namespace {
constexpr std::string_view kCacheMagic = "FNDS";
constexpr std::uint8_t kCacheVersion = 1;
}  // namespace

CacheWriter::CacheWriter(const std::filesystem::path& path, Index cols)
    : path_(path), out_(std::make_unique<std::ofstream>(path, std::ios::binary)), cols_(cols) {
  if (!*out_) throw DatasetError("cannot write cache file " + path.string());
  binio::write_magic(*out_, kCacheMagic, kCacheVersion);
  binio::write<std::uint64_t>(*out_, 0);
  binio::write<std::uint64_t>(*out_, static_cast<std::uint64_t>(cols));
}

CacheWriter::~CacheWriter() {
  if (!finished_) {
    try {
      finish();
    } catch (...) {
    }
  }
}

void CacheWriter::append(const FlowDataset& chunk) {
  if (finished_) throw DatasetError("cache writer already finished");
  if (chunk.cols() != cols_) throw DatasetError("cache chunk has the wrong column count");
  for (Index i = 0; i < chunk.rows(); ++i) {
    for (Index j = 0; j < chunk.cols(); ++j) binio::write<double>(*out_, chunk.features()(i, j));
  }
  labels_.insert(labels_.end(), chunk.labels().begin(), chunk.labels().end());
  rows_ += static_cast<std::uint64_t>(chunk.rows());
}

void CacheWriter::finish() {
  if (finished_) return;
  finished_ = true;
  for (auto l : labels_) binio::write<std::uint8_t>(*out_, l);
  out_->seekp(static_cast<std::streamoff>(kCacheMagic.size() + 1));
  binio::write<std::uint64_t>(*out_, rows_);
  out_->flush();
  if (!*out_) throw DatasetError("failed writing cache file " + path_.string());
}

void save_cache(const FlowDataset& ds, const std::filesystem::path& path) {
  CacheWriter w(path, ds.cols());
  w.append(ds);
  w.finish();
}

FlowDataset load_cache(const std::filesystem::path& path, const FlowSchema& schema,
                       const std::string& silo_name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open cache file " + path.string());
  try {
    const auto version = binio::read_magic(in, kCacheMagic);
    if (version != kCacheVersion) {
      throw DatasetError("unsupported cache version " + std::to_string(version));
    }
    const auto rows = binio::read<std::uint64_t>(in);
    const auto cols = binio::read<std::uint64_t>(in);
    FlowSchema s = schema;
    if (s.feature_names.empty()) {
      for (std::uint64_t j = 0; j < cols; ++j) s.feature_names.push_back("f" + std::to_string(j));
    } else if (s.feature_names.size() != cols) {
      throw DatasetError("cache has " + std::to_string(cols) + " columns but schema lists " +
                         std::to_string(s.feature_names.size()));
    }
    Matrix f(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index i = 0; i < f.rows(); ++i) {
      for (Index j = 0; j < f.cols(); ++j) f(i, j) = binio::read<double>(in);
    }
    Labels labels(rows);
    for (auto& l : labels) {
      l = binio::read<std::uint8_t>(in);
      if (l > 1) throw DatasetError("cache contains a label other than 0/1");
    }
    Provenance prov;
    prov.silo = silo_name.empty() ? path.stem().string() : silo_name;
    return FlowDataset(std::move(f), std::move(labels), std::move(s), std::move(prov));
  } catch (const std::runtime_error& e) {
    if (dynamic_cast<const DatasetError*>(&e)) throw;
    throw DatasetError("corrupt cache file " + path.string() + ": " + e.what());
  }
}

}  // namespace fednids
