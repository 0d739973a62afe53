#include "fednids/efc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <Eigen/Cholesky>

#include "binary_io.hpp"

namespace fednids {

int Discretizer::bin(Index feature, double value) const {
  const auto& e = edges[feature];
  return static_cast<int>(std::upper_bound(e.begin(), e.end(), value) - e.begin());
}

Discretizer fit_discretizer(const Matrix& features, int bins) {
  if (bins < 2) throw EfcError("discretizer needs at least 2 bins");
  if (features.rows() == 0 || features.cols() == 0) throw EfcError("cannot discretize an empty matrix");
  Discretizer d;
  d.max_bins = bins;
  d.edges.resize(static_cast<std::size_t>(features.cols()));
  const auto n = static_cast<std::size_t>(features.rows());
  std::vector<double> col(n);
  for (Index j = 0; j < features.cols(); ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = features(static_cast<Index>(i), j);
    std::sort(col.begin(), col.end());
    auto& edges = d.edges[static_cast<std::size_t>(j)];
    for (int k = 1; k < bins; ++k) {
      double e = col[std::min(n - 1, static_cast<std::size_t>(k) * n / static_cast<std::size_t>(bins))];
      // A quantile stuck on a tie (often the minimum of a sparse column) would
      // open an empty bin; move the edge to the next distinct value instead.
      const double floor = edges.empty() ? col.front() : edges.back();
      if (e <= floor) {
        const auto next = std::upper_bound(col.begin(), col.end(), floor);
        if (next == col.end()) break;
        e = *next;
      }
      edges.push_back(e);
    }
  }
  return d;
}

double EfcModel::coupling(Index i, int a, Index j, int b) const {
  if (a >= discretizer.states(i) - 1 || b >= discretizer.states(j) - 1) return 0.0;
  return couplings(offsets[i] + a, offsets[j] + b);
}

double EfcModel::field(Index i, int a) const {
  if (a >= discretizer.states(i) - 1) return 0.0;
  return fields(offsets[i] + a);
}

namespace {

using StateMatrix = RowMatrixX<int>;

StateMatrix discretize(const Discretizer& d, const Matrix& x) {
  StateMatrix s(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) s(i, j) = d.bin(j, x(i, j));
  }
  return s;
}

void check_compatible(const EfcModel& model, const FlowDataset& ds) {
  if (ds.cols() != model.discretizer.n_features()) {
    throw EfcError("dimension mismatch: EFC model has " +
                   std::to_string(model.discretizer.n_features()) + " features, dataset has " +
                   std::to_string(ds.cols()));
  }
  if (!model.feature_names.empty() && ds.schema().feature_names != model.feature_names) {
    throw EfcError("schema mismatch: dataset features differ from the EFC training features");
  }
}

double energy_of_states(const EfcModel& m, const int* states, Index n) {
  double h = 0.0;
  for (Index i = 0; i < n; ++i) {
    const int a = states[i];
    if (a >= m.discretizer.states(i) - 1) continue;
    const Index ia = m.offsets[i] + a;
    h -= m.fields(ia);
    for (Index j = i + 1; j < n; ++j) {
      const int b = states[j];
      if (b >= m.discretizer.states(j) - 1) continue;
      h -= m.couplings(ia, m.offsets[j] + b);
    }
  }
  return h;
}

}  // namespace

double nearest_rank_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw EfcError("quantile of an empty set");
  if (!(q > 0.0 && q < 1.0)) throw EfcError("quantile must be in (0, 1)");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  // Guard against q * n landing a hair above an integer (0.95 * 100).
  auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

EfcModel fit_efc(const FlowDataset& benign_train, const EfcConfig& config, const Matrix* binning) {
  if (!(config.pseudocount > 0.0 && config.pseudocount < 1.0)) {
    throw EfcError("pseudocount must be in (0, 1)");
  }
  if (!(config.quantile > 0.0 && config.quantile < 1.0)) throw EfcError("quantile must be in (0, 1)");
  if (benign_train.count_label(1) != 0) throw EfcError("EFC must be fitted on benign rows only");
  const auto n_rows = benign_train.rows();
  if (n_rows < 10 * static_cast<Index>(config.bins)) {
    throw EfcError("EFC needs at least " + std::to_string(10 * config.bins) +
                   " benign rows, got " + std::to_string(n_rows));
  }

  EfcModel m;
  m.config = config;
  m.feature_names = benign_train.schema().feature_names;
  if (binning && binning->cols() != benign_train.cols()) {
    throw EfcError("binning rows have " + std::to_string(binning->cols()) + " columns, benign rows have " +
                   std::to_string(benign_train.cols()));
  }
  m.discretizer = fit_discretizer(binning ? *binning : benign_train.features(), config.bins);
  const Index n_feat = m.discretizer.n_features();
  m.offsets.resize(static_cast<std::size_t>(n_feat));
  Index slots = 0;
  for (Index i = 0; i < n_feat; ++i) {
    m.offsets[i] = slots;
    slots += m.discretizer.states(i) - 1;
  }

  const StateMatrix states = discretize(m.discretizer, benign_train.features());
  const double alpha = config.pseudocount;
  const double inv_n = 1.0 / static_cast<double>(n_rows);

  // Indicator matrix over non-gauge slots; pair counts are its Gram matrix.
  Matrix onehot = Matrix::Zero(n_rows, slots);
  for (Index r = 0; r < n_rows; ++r) {
    for (Index i = 0; i < n_feat; ++i) {
      const int a = states(r, i);
      if (a < m.discretizer.states(i) - 1) onehot(r, m.offsets[i] + a) = 1.0;
    }
  }
  const Vector single_emp = onehot.colwise().sum().transpose() * inv_n;
  const Matrix pair_emp = (onehot.transpose() * onehot) * inv_n;

  std::vector<Index> slot_feature(static_cast<std::size_t>(slots));
  for (Index i = 0; i < n_feat; ++i) {
    for (int a = 0; a < m.discretizer.states(i) - 1; ++a) slot_feature[m.offsets[i] + a] = i;
  }

  Vector single(slots);
  for (Index s = 0; s < slots; ++s) {
    const double q = m.discretizer.states(slot_feature[s]);
    single(s) = (1.0 - alpha) * single_emp(s) + alpha / q;
  }
  Matrix cov(slots, slots);
  for (Index s = 0; s < slots; ++s) {
    const Index i = slot_feature[s];
    for (Index t = 0; t < slots; ++t) {
      const Index j = slot_feature[t];
      double pair;
      if (i == j) {
        pair = s == t ? single(s) : 0.0;
      } else {
        const double qq = static_cast<double>(m.discretizer.states(i)) * m.discretizer.states(j);
        pair = (1.0 - alpha) * pair_emp(s, t) + alpha / qq;
      }
      cov(s, t) = pair - single(s) * single(t);
    }
  }
  cov.diagonal().array() += config.ridge;

  if (slots > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
      throw EfcError("singular pair covariance; increase the pseudocount or reduce the bin count");
    }
    Matrix inv = llt.solve(Eigen::MatrixXd::Identity(slots, slots));
    if (!inv.allFinite()) {
      throw EfcError("non-finite covariance inverse; increase the pseudocount or reduce the bin count");
    }
    m.couplings = -inv;
    // Exact symmetry: x + y == y + x in IEEE arithmetic.
    m.couplings = (0.5 * (m.couplings + m.couplings.transpose())).eval();
  } else {
    m.couplings = Matrix::Zero(0, 0);
  }

  // Mean-field self-consistency against the gauge state.
  m.fields.resize(slots);
  std::vector<double> gauge_freq(static_cast<std::size_t>(n_feat));
  for (Index i = 0; i < n_feat; ++i) {
    double sum = 0.0;
    for (int a = 0; a < m.discretizer.states(i) - 1; ++a) sum += single(m.offsets[i] + a);
    gauge_freq[static_cast<std::size_t>(i)] = 1.0 - sum;
  }
  for (Index s = 0; s < slots; ++s) {
    const Index i = slot_feature[s];
    double h = std::log(single(s) / gauge_freq[static_cast<std::size_t>(i)]);
    for (Index t = 0; t < slots; ++t) {
      if (slot_feature[t] != i) h -= m.couplings(s, t) * single(t);
    }
    m.fields(s) = h;
  }

  std::vector<double> train_energy(static_cast<std::size_t>(n_rows));
  for (Index r = 0; r < n_rows; ++r) train_energy[r] = energy_of_states(m, states.row(r).data(), n_feat);
  m.cutoff = nearest_rank_quantile(std::move(train_energy), config.quantile);
  return m;
}

double energy(const EfcModel& model, Eigen::Ref<const RowVector> row) {
  const Index n = model.discretizer.n_features();
  if (row.size() != n) {
    throw EfcError("dimension mismatch: row has " + std::to_string(row.size()) +
                   " values, model expects " + std::to_string(n));
  }
  std::vector<int> states(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) states[i] = model.discretizer.bin(i, row(i));
  return energy_of_states(model, states.data(), n);
}

Vector energies(const EfcModel& model, const FlowDataset& ds) {
  check_compatible(model, ds);
  const StateMatrix states = discretize(model.discretizer, ds.features());
  Vector out(ds.rows());
  for (Index r = 0; r < ds.rows(); ++r) out(r) = energy_of_states(model, states.row(r).data(), ds.cols());
  return out;
}

Labels predict(const EfcModel& model, const FlowDataset& ds) {
  const Vector e = energies(model, ds);
  Labels out(static_cast<std::size_t>(e.size()));
  for (Index i = 0; i < e.size(); ++i) out[i] = e(i) > model.cutoff ? 1 : 0;
  return out;
}

FlowDataset stack_feature(const FlowDataset& ds, const Labels& preds) {
  if (preds.size() != static_cast<std::size_t>(ds.rows())) {
    throw EfcError("prediction count " + std::to_string(preds.size()) + " != row count " +
                   std::to_string(ds.rows()));
  }
  if (ds.schema().has_feature(kEfcColumn)) throw EfcError("dataset already carries a stacked EFC column");
  Matrix f(ds.rows(), ds.cols() + 1);
  f.leftCols(ds.cols()) = ds.features();
  for (Index i = 0; i < ds.rows(); ++i) f(i, ds.cols()) = preds[i] ? 1.0 : 0.0;
  FlowSchema schema = ds.schema();
  schema.feature_names.emplace_back(kEfcColumn);
  return ds.with_features(std::move(f), std::move(schema));
}

namespace {
constexpr std::string_view kEfcMagic = "EFCM";
constexpr std::uint8_t kEfcVersion = 1;

void write_string(std::ostream& os, const std::string& s) {
  binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  std::string s(binio::read<std::uint32_t>(is), '\0');
  is.read(s.data(), static_cast<std::streamsize>(s.size()));
  if (!is) throw std::runtime_error("truncated string");
  return s;
}
}  // namespace

void save_efc(const EfcModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EfcError("cannot write EFC model " + path.string());
  binio::write_magic(out, kEfcMagic, kEfcVersion);
  binio::write<std::int32_t>(out, m.config.bins);
  binio::write<double>(out, m.config.pseudocount);
  binio::write<double>(out, m.config.quantile);
  binio::write<double>(out, m.config.ridge);
  binio::write<double>(out, m.cutoff);
  binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(m.discretizer.n_features()));
  for (Index i = 0; i < m.discretizer.n_features(); ++i) {
    write_string(out, i < static_cast<Index>(m.feature_names.size()) ? m.feature_names[i] : "");
    const auto& e = m.discretizer.edges[i];
    binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(e.size()));
    for (double v : e) binio::write<double>(out, v);
  }
  for (Index s = 0; s < m.slots(); ++s) binio::write<double>(out, m.fields(s));
  for (Index s = 0; s < m.slots(); ++s) {
    for (Index t = 0; t < m.slots(); ++t) binio::write<double>(out, m.couplings(s, t));
  }
  if (!out) throw EfcError("failed writing EFC model " + path.string());
}

EfcModel load_efc(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EfcError("cannot open EFC model " + path.string());
  try {
    if (binio::read_magic(in, kEfcMagic) != kEfcVersion) throw EfcError("unsupported EFC model version");
    EfcModel m;
    m.config.bins = binio::read<std::int32_t>(in);
    m.config.pseudocount = binio::read<double>(in);
    m.config.quantile = binio::read<double>(in);
    m.config.ridge = binio::read<double>(in);
    m.cutoff = binio::read<double>(in);
    const auto n_feat = binio::read<std::uint32_t>(in);
    m.discretizer.max_bins = m.config.bins;
    m.discretizer.edges.resize(n_feat);
    m.offsets.resize(n_feat);
    Index slots = 0;
    for (std::uint32_t i = 0; i < n_feat; ++i) {
      m.feature_names.push_back(read_string(in));
      auto& e = m.discretizer.edges[i];
      e.resize(binio::read<std::uint32_t>(in));
      for (double& v : e) v = binio::read<double>(in);
      m.offsets[i] = slots;
      slots += static_cast<Index>(e.size());
    }
    m.fields.resize(slots);
    for (Index s = 0; s < slots; ++s) m.fields(s) = binio::read<double>(in);
    m.couplings.resize(slots, slots);
    for (Index s = 0; s < slots; ++s) {
      for (Index t = 0; t < slots; ++t) m.couplings(s, t) = binio::read<double>(in);
    }
    if (std::all_of(m.feature_names.begin(), m.feature_names.end(),
                    [](const std::string& s) { return s.empty(); })) {
      m.feature_names.clear();
    }
    return m;
  } catch (const std::runtime_error& e) {
    if (dynamic_cast<const EfcError*>(&e)) throw;
    throw EfcError("corrupt EFC model " + path.string() + ": " + e.what());
  }
}

}  // namespace fednids
