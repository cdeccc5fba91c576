#pragma once

#include <array>
#include <span>
#include <string>

namespace nowcast {

inline constexpr std::size_t kClasses = 3;

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::array<std::array<long long, kClasses>, kClasses> counts{};

  long long total() const;
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels);

struct MetricsReport {
  std::array<double, kClasses> precision{};
  std::array<double, kClasses> recall{};
  std::array<double, kClasses> f1{};
  std::array<long long, kClasses> support{};
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
};

/// Per-class ratios with 0/0 taken as 0; macro values are plain means over
/// all three classes, accuracy is trace / total.
MetricsReport macro_metrics(const ConfusionMatrix& cm);

/// Pretty-printed JSON (stable key order and number formatting).
std::string to_json(const MetricsReport& report);
/// Header row `true\pred,0,1,2` then one row per true class.
std::string to_csv(const ConfusionMatrix& cm);

}  // namespace nowcast
