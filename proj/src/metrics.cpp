#include "fednids/metrics.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

namespace fednids {

ConfusionMatrix confusion(const Labels& actual, const Labels& predicted) {
  if (actual.size() != predicted.size()) throw MetricsError("confusion: length mismatch");
  if (actual.empty()) throw MetricsError("confusion: empty input");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const bool a = actual[i] != 0;
    const bool p = predicted[i] != 0;
    if (a && p) ++cm.tp;
    else if (!a && p) ++cm.fp;
    else if (a && !p) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.confusion = cm;
  auto ratio = [&r](std::uint64_t num, std::uint64_t den, const char* name) {
    if (den == 0) {
      r.degenerate.emplace_back(name);
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  r.accuracy = ratio(cm.tp + cm.tn, cm.total(), "accuracy");
  r.precision = ratio(cm.tp, cm.tp + cm.fp, "precision");
  r.recall = ratio(cm.tp, cm.tp + cm.fn, "recall");
  r.missrate_paper = ratio(cm.fn, cm.fn + cm.tn, "missrate_paper");
  r.fnr_standard = ratio(cm.fn, cm.fn + cm.tp, "fnr_standard");
  r.fallout = ratio(cm.fp, cm.fp + cm.tn, "fallout");
  if (r.precision + r.recall > 0.0) {
    r.f1 = 2.0 * r.recall * r.precision / (r.recall + r.precision);
  } else {
    r.f1 = 0.0;
    r.degenerate.emplace_back("f1");
  }
  return r;
}

double roc_auc(const Vector& scores, const Labels& actual) {
  if (static_cast<std::size_t>(scores.size()) != actual.size()) throw MetricsError("roc_auc: length mismatch");
  const auto pos = static_cast<double>(std::count(actual.begin(), actual.end(), 1));
  const auto neg = static_cast<double>(actual.size()) - pos;
  if (pos == 0.0 || neg == 0.0) throw MetricsError("roc_auc: undefined for single-class input");

  std::vector<std::size_t> order(actual.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores(a) > scores(b); });

  double area = 0.0;
  double tp = 0.0, fp = 0.0;
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores(order[k]);
    double dtp = 0.0, dfp = 0.0;
    for (; k < order.size() && scores(order[k]) == s; ++k) {
      (actual[order[k]] ? dtp : dfp) += 1.0;
    }
    // Trapezoid between consecutive ROC points, in count units.
    area += dfp * (tp + 0.5 * dtp);
    tp += dtp;
    fp += dfp;
  }
  return area / (pos * neg);
}

MetricsReport evaluate(const Vector& scores, const Labels& actual, const Labels& predicted) {
  MetricsReport r = compute_metrics(confusion(actual, predicted));
  const bool has_pos = std::find(actual.begin(), actual.end(), 1) != actual.end();
  const bool has_neg = std::find(actual.begin(), actual.end(), 0) != actual.end();
  if (has_pos && has_neg) {
    r.auc = roc_auc(scores, actual);
  } else {
    r.degenerate.emplace_back("auc");
  }
  return r;
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"accuracy", r.accuracy},
                     {"precision", r.precision},
                     {"recall", r.recall},
                     {"f1", r.f1},
                     {"missrate_paper", r.missrate_paper},
                     {"fnr_standard", r.fnr_standard},
                     {"fallout", r.fallout},
                     {"auc", r.auc ? nlohmann::json(*r.auc) : nlohmann::json(nullptr)},
                     {"tp", r.confusion.tp},
                     {"fp", r.confusion.fp},
                     {"fn", r.confusion.fn},
                     {"tn", r.confusion.tn},
                     {"degenerate", r.degenerate}};
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
  j.at("accuracy").get_to(r.accuracy);
  j.at("precision").get_to(r.precision);
  j.at("recall").get_to(r.recall);
  j.at("f1").get_to(r.f1);
  j.at("missrate_paper").get_to(r.missrate_paper);
  j.at("fnr_standard").get_to(r.fnr_standard);
  j.at("fallout").get_to(r.fallout);
  if (j.at("auc").is_null()) r.auc.reset();
  else r.auc = j.at("auc").get<double>();
  j.at("tp").get_to(r.confusion.tp);
  j.at("fp").get_to(r.confusion.fp);
  j.at("fn").get_to(r.confusion.fn);
  j.at("tn").get_to(r.confusion.tn);
  r.degenerate = j.value("degenerate", std::vector<std::string>{});
}

}  // namespace fednids
