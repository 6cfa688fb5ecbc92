#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mtseg/grid.hpp"

namespace mtseg {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  [[nodiscard]] std::uint64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// Pixel counts for binary masks of identical shape. Values other than 0/1
// throw ContractViolation.
[[nodiscard]] ConfusionCounts confusion(const Mask& pred, const Mask& gt);
[[nodiscard]] ConfusionCounts confusion(const std::vector<Mask>& pred, const std::vector<Mask>& gt);

inline constexpr std::array<std::string_view, 6> kMetricNames = {"Dice",      "mIoU",   "Accuracy",
                                                                 "Precision", "Recall", "Specificity"};

// Percentages in [0, 100].
struct MetricsReport {
  double dice = 0.0;
  double miou = 0.0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double specificity = 0.0;

  [[nodiscard]] std::array<double, 6> values() const { return {dice, miou, accuracy, precision, recall, specificity}; }
  [[nodiscard]] static MetricsReport from_values(const std::array<double, 6>& v);
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

// A ratio whose denominator is zero scores 100 when its error counts are zero.
// mIoU is the mean of foreground and background IoU.
[[nodiscard]] MetricsReport compute_metrics(const ConfusionCounts& c);

struct AggregateReport {
  MetricsReport mean;
  MetricsReport std;  // sample standard deviation, 0 for a single report
  std::size_t runs = 0;
};

[[nodiscard]] AggregateReport aggregate(const std::vector<MetricsReport>& reports);

// One row of the comparison table.
struct TableRow {
  std::string label;
  AggregateReport result;
  std::vector<std::string> notes;  // e.g. failed runs
};

// Published reference rows (10-run mean and std) for side-by-side comparison.
[[nodiscard]] std::vector<TableRow> paper_reference_rows();

[[nodiscard]] std::string format_table_csv(const std::vector<TableRow>& rows);
[[nodiscard]] std::string format_table_text(const std::vector<TableRow>& rows);

// Inverse of the per-run CSV written by report_csv(); returns nullopt when the
// header does not list exactly the six metrics.
[[nodiscard]] std::string report_csv(const MetricsReport& r);
[[nodiscard]] std::optional<MetricsReport> parse_report_csv(const std::string& text);

}  // namespace mtseg
