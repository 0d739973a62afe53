#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fednids/types.hpp"

namespace fednids {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Attack is the positive class.
struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(const Labels& actual, const Labels& predicted);

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double missrate_paper = 0.0;  // FN / (FN + TN)
  double fnr_standard = 0.0;    // FN / (FN + TP)
  double fallout = 0.0;         // FP / (FP + TN)
  std::optional<double> auc;
  ConfusionMatrix confusion;
  // Names of metrics whose denominator was zero (reported as 0).
  std::vector<std::string> degenerate;

  bool operator==(const MetricsReport&) const = default;
};

MetricsReport compute_metrics(const ConfusionMatrix& cm);

// Trapezoidal ROC AUC with tied scores grouped; higher score = more anomalous.
double roc_auc(const Vector& scores, const Labels& actual);

// Full report including AUC when both classes are present.
MetricsReport evaluate(const Vector& scores, const Labels& actual, const Labels& predicted);

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

}  // namespace fednids
