#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "fednids/autoencoder.hpp"
#include "fednids/dataset.hpp"

namespace fednids {

class DetectorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DetectionMode { BenignOnly, DualThreshold };

std::string to_string(DetectionMode mode);
DetectionMode parse_detection_mode(const std::string& s);

struct ThresholdPair {
  double benign = 0.0;                // T_B
  std::optional<double> attack;       // T_A
  int round = 0;
  std::string client;

  // Attacks reconstruct better than benign flows; the dual rule still
  // applies literally but the condition deserves a warning.
  bool inverted() const { return attack && *attack < benign; }
};

// Per-row reconstruction MAE.
Vector score_dataset(const AeParams& params, const FlowDataset& ds);

// T_B (and T_A in dual mode) as the mean per-sample MAE over each subset.
ThresholdPair compute_thresholds(const AeParams& params, const FlowDataset& benign,
                                 const FlowDataset* attack, DetectionMode mode);

// Single threshold at the nearest-rank q-quantile of validation losses.
ThresholdPair quantile_threshold(const AeParams& params, const FlowDataset& validation, double q);

// 1 = attack. Ties classify benign in both modes.
std::uint8_t classify(double loss, const ThresholdPair& th, DetectionMode mode);
Labels classify_all(const Vector& losses, const ThresholdPair& th, DetectionMode mode);

}  // namespace fednids
