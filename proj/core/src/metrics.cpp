#include "nowcast/metrics.hpp"

#include <sstream>

#include <nlohmann/json.hpp>

#include "nowcast/error.hpp"

namespace nowcast {

long long ConfusionMatrix::total() const {
  long long t = 0;
  for (const auto& row : counts)
    for (auto c : row) t += c;
  return t;
}

ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw UsageError("confusion: predictions and labels differ in length");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || y >= static_cast<int>(kClasses) || p < 0 || p >= static_cast<int>(kClasses)) {
      throw UsageError("confusion: class index out of range at position " + std::to_string(i));
    }
    ++cm.counts[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
  }
  return cm;
}

namespace {
double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }
}  // namespace

MetricsReport macro_metrics(const ConfusionMatrix& cm) {
  const long long total = cm.total();
  if (total <= 0) throw UsageError("macro_metrics: empty confusion matrix");
  MetricsReport r;
  r.confusion = cm;
  long long trace = 0;
  for (std::size_t i = 0; i < kClasses; ++i) {
    const double tp = static_cast<double>(cm.counts[i][i]);
    double fp = 0.0, fn = 0.0;
    for (std::size_t j = 0; j < kClasses; ++j) {
      if (j == i) continue;
      fp += static_cast<double>(cm.counts[j][i]);
      fn += static_cast<double>(cm.counts[i][j]);
    }
    r.precision[i] = ratio(tp, tp + fp);
    r.recall[i] = ratio(tp, tp + fn);
    r.f1[i] = ratio(2.0 * r.precision[i] * r.recall[i], r.precision[i] + r.recall[i]);
    r.support[i] = cm.counts[i][0] + cm.counts[i][1] + cm.counts[i][2];
    trace += cm.counts[i][i];
  }
  for (std::size_t i = 0; i < kClasses; ++i) {
    r.macro_precision += r.precision[i];
    r.macro_recall += r.recall[i];
    r.macro_f1 += r.f1[i];
  }
  const double m = static_cast<double>(kClasses);
  r.macro_precision /= m;
  r.macro_recall /= m;
  r.macro_f1 /= m;
  r.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  return r;
}

std::string to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["macro_precision"] = r.macro_precision;
  j["macro_recall"] = r.macro_recall;
  j["macro_f1"] = r.macro_f1;
  j["accuracy"] = r.accuracy;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["support"] = r.support;
  j["confusion"] = r.confusion.counts;
  return j.dump(2) + "\n";
}

std::string to_csv(const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << "true\\pred,0,1,2\n";
  for (std::size_t i = 0; i < kClasses; ++i) {
    os << i;
    for (std::size_t j = 0; j < kClasses; ++j) os << ',' << cm.counts[i][j];
    os << '\n';
  }
  return os.str();
}

}  // namespace nowcast
