#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fednids/dataset.hpp"
#include "fednids/types.hpp"

namespace fednids {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One dense layer: weight matrix rows x cols (out x in) plus rows biases.
struct LayerShape {
  Index rows = 0;
  Index cols = 0;

  Index size() const { return rows * cols + rows; }
  bool operator==(const LayerShape&) const = default;
};

using ShapeManifest = std::vector<LayerShape>;

// N -> 32 -> 16 -> 8 -> 4 -> 8 -> 16 -> 32 -> N. ReLU on hidden layers,
// logistic sigmoid on the output.
struct AeArchitecture {
  Index input_dim = 0;
  std::vector<Index> hidden{32, 16, 8, 4, 8, 16, 32};

  ShapeManifest manifest() const;
};

Index flat_size(const ShapeManifest& manifest);

// Flat parameter vector laid out layer by layer; within a layer the weight
// matrix comes first (row-major, out x in), then the biases.
class AeParams {
 public:
  AeParams() = default;
  AeParams(ShapeManifest manifest, Vector flat);

  const ShapeManifest& manifest() const { return manifest_; }
  const Vector& flat() const { return flat_; }
  Index input_dim() const { return manifest_.empty() ? 0 : manifest_.front().cols; }
  std::size_t layers() const { return manifest_.size(); }

  Eigen::Map<const Matrix> weights(std::size_t layer) const;
  Eigen::Map<const Vector> bias(std::size_t layer) const;

  bool operator==(const AeParams& o) const {
    return manifest_ == o.manifest_ && flat_.size() == o.flat_.size() && flat_ == o.flat_;
  }

 private:
  ShapeManifest manifest_;
  Vector flat_;
  std::vector<Index> offsets_;
};

struct TrainConfig {
  double learning_rate = 0.001;
  Index batch_size = 128;
  int epochs = 10;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct AdamState {
  Vector m;
  Vector v;
  std::int64_t t = 0;

  static AdamState zeros(Index n) { return {Vector::Zero(n), Vector::Zero(n), 0}; }
};

// theta -= lr * m_hat / (sqrt(v_hat) + eps) with bias-corrected moments.
void adam_step(Vector& params, const Vector& grad, AdamState& state, const TrainConfig& cfg);

AeParams init_params(const AeArchitecture& arch, std::uint64_t seed);

Matrix forward(const AeParams& params, const Eigen::Ref<const Matrix>& x);

template <typename A, typename B>
double mse_loss(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& x_hat) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) throw ModelError("mse_loss: shape mismatch");
  if (x.size() == 0) return 0.0;
  return (x - x_hat).squaredNorm() / static_cast<double>(x.size());
}

// Per-row mean absolute error over the features.
template <typename A, typename B>
Vector mae_per_sample(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& x_hat) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) {
    throw ModelError("mae_per_sample: shape mismatch");
  }
  if (x.cols() == 0) return Vector::Zero(x.rows());
  return (x - x_hat).cwiseAbs().rowwise().sum() / static_cast<double>(x.cols());
}

// Exact gradient of mse_loss(batch, forward(batch)) with respect to the flat
// parameters. If loss is non-null it receives the batch loss.
Vector gradient(const AeParams& params, const Eigen::Ref<const Matrix>& batch, double* loss = nullptr);

struct TrainResult {
  AeParams params;
  std::vector<double> loss_history;  // mean loss per epoch
};

TrainResult train_epochs(const AeParams& params, const FlowDataset& train, const TrainConfig& cfg);

inline const Vector& get_parameters(const AeParams& params) { return params.flat(); }
AeParams set_parameters(const AeParams& like, const Vector& flat);

// Checkpoint / wire payload: magic "AECK", version byte, u32 layer count,
// u32 rows and cols per layer, then the flat f64 vector, little-endian.
std::string to_bytes(const AeParams& params);
AeParams from_bytes(const std::string& bytes);
void save_checkpoint(const AeParams& params, const std::filesystem::path& path);
AeParams load_checkpoint(const std::filesystem::path& path);

}  // namespace fednids
