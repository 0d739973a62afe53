#include "fednids/autoencoder.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "binary_io.hpp"
#include "fednids/random.hpp"

namespace fednids {

ShapeManifest AeArchitecture::manifest() const {
  if (input_dim < 1) throw ModelError("autoencoder input dimension must be >= 1");
  ShapeManifest m;
  Index in = input_dim;
  for (Index width : hidden) {
    m.push_back({width, in});
    in = width;
  }
  m.push_back({input_dim, in});
  return m;
}

Index flat_size(const ShapeManifest& manifest) {
  Index n = 0;
  for (const auto& l : manifest) n += l.size();
  return n;
}

AeParams::AeParams(ShapeManifest manifest, Vector flat)
    : manifest_(std::move(manifest)), flat_(std::move(flat)) {
  for (std::size_t l = 0; l < manifest_.size(); ++l) {
    if (manifest_[l].rows < 1 || manifest_[l].cols < 1) throw ModelError("empty layer in manifest");
    if (l > 0 && manifest_[l].cols != manifest_[l - 1].rows) {
      throw ModelError("manifest layers do not chain");
    }
  }
  if (flat_.size() != flat_size(manifest_)) {
    throw ModelError("parameter vector has length " + std::to_string(flat_.size()) +
                     ", manifest expects " + std::to_string(flat_size(manifest_)));
  }
  Index off = 0;
  for (const auto& l : manifest_) {
    offsets_.push_back(off);
    off += l.size();
  }
}

Eigen::Map<const Matrix> AeParams::weights(std::size_t layer) const {
  const auto& s = manifest_[layer];
  return {flat_.data() + offsets_[layer], s.rows, s.cols};
}

Eigen::Map<const Vector> AeParams::bias(std::size_t layer) const {
  const auto& s = manifest_[layer];
  return {flat_.data() + offsets_[layer] + s.rows * s.cols, s.rows};
}

void TrainConfig::validate() const {
  if (learning_rate < 0.0) throw ModelError("learning rate must be non-negative");
  if (batch_size < 1) throw ModelError("batch size must be positive");
  if (epochs < 1) throw ModelError("epochs must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
    throw ModelError("invalid Adam constants");
  }
}

void adam_step(Vector& params, const Vector& grad, AdamState& s, const TrainConfig& cfg) {
  if (s.m.size() != params.size() || s.v.size() != params.size() || grad.size() != params.size()) {
    throw ModelError("adam_step: size mismatch");
  }
  ++s.t;
  s.m = cfg.beta1 * s.m + (1.0 - cfg.beta1) * grad;
  s.v = cfg.beta2 * s.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
  params.array() -= cfg.learning_rate * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + cfg.epsilon);
}

AeParams init_params(const AeArchitecture& arch, std::uint64_t seed) {
  const ShapeManifest manifest = arch.manifest();
  Vector flat = Vector::Zero(flat_size(manifest));
  Rng rng(seed);
  Index off = 0;
  for (const auto& l : manifest) {
    const double limit = std::sqrt(6.0 / static_cast<double>(l.rows + l.cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Index k = 0; k < l.rows * l.cols; ++k) flat(off + k) = dist(rng);
    off += l.size();
  }
  return AeParams(manifest, std::move(flat));
}

namespace {

inline void sigmoid_inplace(Matrix& z) {
  z = (1.0 + (-z.array()).exp()).inverse().matrix();
}

// Activations per layer boundary: acts[0] = input, acts[L] = reconstruction.
std::vector<Matrix> forward_all(const AeParams& p, const Eigen::Ref<const Matrix>& x) {
  if (x.cols() != p.input_dim()) {
    throw ModelError("input has " + std::to_string(x.cols()) + " features, model expects " +
                     std::to_string(p.input_dim()));
  }
  std::vector<Matrix> acts;
  acts.reserve(p.layers() + 1);
  acts.emplace_back(x);
  for (std::size_t l = 0; l < p.layers(); ++l) {
    Matrix z = acts.back() * p.weights(l).transpose();
    z.rowwise() += p.bias(l).transpose();
    if (l + 1 < p.layers()) {
      z = z.cwiseMax(0.0);
    } else {
      sigmoid_inplace(z);
    }
    acts.push_back(std::move(z));
  }
  return acts;
}

}  // namespace

Matrix forward(const AeParams& params, const Eigen::Ref<const Matrix>& x) {
  return std::move(forward_all(params, x).back());
}

Vector gradient(const AeParams& p, const Eigen::Ref<const Matrix>& batch, double* loss) {
  if (batch.rows() == 0) throw ModelError("gradient of an empty batch");
  const std::vector<Matrix> acts = forward_all(p, batch);
  const Matrix& out = acts.back();
  const double scale = 1.0 / static_cast<double>(batch.size());
  if (loss) *loss = (out - batch).squaredNorm() * scale;

  Vector grad(p.flat().size());
  Matrix delta = (2.0 * scale) * (out - batch).cwiseProduct(out.cwiseProduct((1.0 - out.array()).matrix()));
  Index end = grad.size();
  for (std::size_t l = p.layers(); l-- > 0;) {
    const auto& s = p.manifest()[l];
    const Index off = end - s.size();
    Eigen::Map<Matrix>(grad.data() + off, s.rows, s.cols).noalias() = delta.transpose() * acts[l];
    grad.segment(off + s.rows * s.cols, s.rows) = delta.colwise().sum().transpose();
    if (l > 0) {
      Matrix back = delta * p.weights(l);
      delta = back.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
    }
    end = off;
  }
  return grad;
}

TrainResult train_epochs(const AeParams& params, const FlowDataset& train, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw ModelError("cannot train on an empty dataset");
  if (train.cols() != params.input_dim()) {
    throw ModelError("training data has " + std::to_string(train.cols()) +
                     " features, model expects " + std::to_string(params.input_dim()));
  }
  const auto n = static_cast<std::size_t>(train.rows());
  const Matrix& x = train.features();
  Vector theta = params.flat();
  AdamState adam = AdamState::zeros(theta.size());
  TrainResult result;
  Matrix batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = permutation(n, cfg.seed + static_cast<std::uint64_t>(epoch));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      batch.resize(static_cast<Index>(stop - start), x.cols());
      for (std::size_t k = start; k < stop; ++k) batch.row(static_cast<Index>(k - start)) = x.row(static_cast<Index>(order[k]));
      double batch_loss = 0.0;
      const Vector g = gradient(AeParams(params.manifest(), theta), batch, &batch_loss);
      adam_step(theta, g, adam, cfg);
      epoch_loss += batch_loss * static_cast<double>(stop - start);
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(n));
  }
  result.params = AeParams(params.manifest(), std::move(theta));
  return result;
}

AeParams set_parameters(const AeParams& like, const Vector& flat) {
  if (flat.size() != like.flat().size()) {
    throw ModelError("parameter vector has length " + std::to_string(flat.size()) +
                     ", expected " + std::to_string(like.flat().size()));
  }
  return AeParams(like.manifest(), flat);
}

namespace {
constexpr std::string_view kCkptMagic = "AECK";
constexpr std::uint8_t kCkptVersion = 1;

void write_params(std::ostream& os, const AeParams& p) {
  binio::write_magic(os, kCkptMagic, kCkptVersion);
  binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(p.layers()));
  for (const auto& l : p.manifest()) {
    binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(l.rows));
    binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(l.cols));
  }
  for (Index i = 0; i < p.flat().size(); ++i) binio::write<double>(os, p.flat()(i));
}

AeParams read_params(std::istream& is) {
  try {
    if (binio::read_magic(is, kCkptMagic) != kCkptVersion) throw ModelError("unsupported checkpoint version");
    const auto n_layers = binio::read<std::uint32_t>(is);
    ShapeManifest m(n_layers);
    for (auto& l : m) {
      l.rows = binio::read<std::uint32_t>(is);
      l.cols = binio::read<std::uint32_t>(is);
    }
    Vector flat(flat_size(m));
    for (Index i = 0; i < flat.size(); ++i) flat(i) = binio::read<double>(is);
    return AeParams(std::move(m), std::move(flat));
  } catch (const ModelError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw ModelError(std::string("corrupt checkpoint: ") + e.what());
  }
}
}  // namespace

std::string to_bytes(const AeParams& params) {
  std::ostringstream os(std::ios::binary);
  write_params(os, params);
  return os.str();
}

AeParams from_bytes(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_params(is);
}

void save_checkpoint(const AeParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot write checkpoint " + path.string());
  write_params(out, params);
}

AeParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open checkpoint " + path.string());
  return read_params(in);
}

}  // namespace fednids
