#include "fednids/detector.hpp"

#include <cmath>
#include <vector>

#include "fednids/efc.hpp"

namespace fednids {

std::string to_string(DetectionMode mode) {
  return mode == DetectionMode::BenignOnly ? "benign-only" : "dual";
}

DetectionMode parse_detection_mode(const std::string& s) {
  if (s == "benign-only" || s == "benign") return DetectionMode::BenignOnly;
  if (s == "dual" || s == "dual-threshold") return DetectionMode::DualThreshold;
  throw DetectorError("unknown detection mode '" + s + "' (expected benign-only or dual)");
}

Vector score_dataset(const AeParams& params, const FlowDataset& ds) {
  if (ds.cols() != params.input_dim()) {
    throw DetectorError("dataset has " + std::to_string(ds.cols()) +
                        " features, autoencoder expects " + std::to_string(params.input_dim()));
  }
  if (ds.empty()) return Vector(0);
  return mae_per_sample(ds.features(), forward(params, ds.features()));
}

ThresholdPair compute_thresholds(const AeParams& params, const FlowDataset& benign,
                                 const FlowDataset* attack, DetectionMode mode) {
  if (benign.empty()) throw DetectorError("benign validation subset is empty; cannot set T_B");
  ThresholdPair th;
  th.benign = score_dataset(params, benign).mean();
  if (mode == DetectionMode::DualThreshold) {
    if (attack == nullptr || attack->empty()) {
      throw DetectorError("attack validation subset is empty; use benign-only mode");
    }
    th.attack = score_dataset(params, *attack).mean();
  }
  return th;
}

ThresholdPair quantile_threshold(const AeParams& params, const FlowDataset& validation, double q) {
  if (validation.empty()) throw DetectorError("validation set is empty");
  const Vector s = score_dataset(params, validation);
  ThresholdPair th;
  th.benign = nearest_rank_quantile(std::vector<double>(s.data(), s.data() + s.size()), q);
  return th;
}

std::uint8_t classify(double loss, const ThresholdPair& th, DetectionMode mode) {
  if (mode == DetectionMode::BenignOnly) return loss > th.benign ? 1 : 0;
  if (!th.attack) throw DetectorError("dual-threshold classification needs T_A");
  return std::abs(loss - th.benign) > std::abs(loss - *th.attack) ? 1 : 0;
}

Labels classify_all(const Vector& losses, const ThresholdPair& th, DetectionMode mode) {
  Labels out(static_cast<std::size_t>(losses.size()));
  for (Index i = 0; i < losses.size(); ++i) out[i] = classify(losses(i), th, mode);
  return out;
}

}  // namespace fednids
