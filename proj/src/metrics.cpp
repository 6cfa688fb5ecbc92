#include "mtseg/metrics.hpp"

#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "mtseg/error.hpp"

namespace mtseg {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

ConfusionCounts confusion(const Mask& pred, const Mask& gt) {
  if (!pred.same_shape(gt) || pred.values.size() != gt.values.size())
    throw ContractViolation("confusion: prediction and ground truth differ in shape");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const std::uint8_t p = pred.values[i];
    const std::uint8_t g = gt.values[i];
    if (p > 1 || g > 1) throw ContractViolation("confusion: masks must be binary");
    if (p) {
      if (g) ++c.tp;
      else ++c.fp;
    } else {
      if (g) ++c.fn;
      else ++c.tn;
    }
  }
  return c;
}

ConfusionCounts confusion(const std::vector<Mask>& pred, const std::vector<Mask>& gt) {
  if (pred.size() != gt.size()) throw ContractViolation("confusion: prediction and ground truth counts differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) c += confusion(pred[i], gt[i]);
  return c;
}

MetricsReport MetricsReport::from_values(const std::array<double, 6>& v) {
  return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den, std::uint64_t errors) {
  if (den == 0) return errors == 0 ? 100.0 : 0.0;
  return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport compute_metrics(const ConfusionCounts& c) {
  const std::uint64_t total = c.total();
  if (total == 0) throw ContractViolation("compute_metrics: no pixels counted");
  MetricsReport r;
  r.dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, c.fp + c.fn);
  const double iou_fg = ratio(c.tp, c.tp + c.fp + c.fn, c.fp + c.fn);
  const double iou_bg = ratio(c.tn, c.tn + c.fp + c.fn, c.fp + c.fn);
  r.miou = (iou_fg + iou_bg) / 2.0;
  r.accuracy = ratio(c.tp + c.tn, total, c.fp + c.fn);
  r.precision = ratio(c.tp, c.tp + c.fp, c.fp + c.fn);
  r.recall = ratio(c.tp, c.tp + c.fn, c.fp + c.fn);
  r.specificity = ratio(c.tn, c.tn + c.fp, c.fp + c.fn);
  return r;
}

AggregateReport aggregate(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ContractViolation("aggregate: no reports");
  const double n = static_cast<double>(reports.size());
  std::array<double, 6> mean{}, sd{};
  for (const auto& r : reports) {
    const auto v = r.values();
    for (int k = 0; k < 6; ++k) mean[k] += v[k];
  }
  for (auto& m : mean) m /= n;
  if (reports.size() > 1) {
    for (const auto& r : reports) {
      const auto v = r.values();
      for (int k = 0; k < 6; ++k) sd[k] += (v[k] - mean[k]) * (v[k] - mean[k]);
    }
    for (auto& s : sd) s = std::sqrt(s / (n - 1.0));
  }
  return {MetricsReport::from_values(mean), MetricsReport::from_values(sd), reports.size()};
}

std::vector<TableRow> paper_reference_rows() {
  return {
      {"Supervised (published)",
       {{67.915, 53.679, 99.745, 57.948, 92.495, 99.775}, {0.313, 0.327, 0.005, 0.788, 0.907, 0.010}, 10},
       {}},
      {"Semi-supervised (published)",
       {{70.209, 55.509, 99.792, 64.732, 86.112, 99.846}, {0.229, 0.253, 0.003, 0.773, 0.936, 0.006}, 10},
       {}},
  };
}

std::string format_table_csv(const std::vector<TableRow>& rows) {
  std::string out = "method,runs";
  for (auto name : kMetricNames) out += fmt::format(",{0}_mean,{0}_std", name);
  out += ",notes\n";
  for (const auto& row : rows) {
    out += fmt::format("{},{}", row.label, row.result.runs);
    const auto m = row.result.mean.values();
    const auto s = row.result.std.values();
    for (int k = 0; k < 6; ++k) out += fmt::format(",{:.3f},{:.3f}", m[k], s[k]);
    std::string notes;
    for (const auto& n : row.notes) notes += (notes.empty() ? "" : "; ") + n;
    out += "," + notes + "\n";
  }
  return out;
}

std::string format_table_text(const std::vector<TableRow>& rows) {
  std::size_t label_width = 6;
  for (const auto& row : rows) label_width = std::max(label_width, row.label.size());
  std::string out = fmt::format("{:<{}}", "Method", label_width);
  for (auto name : kMetricNames) out += fmt::format("  {:>16}", name);
  out += "\n";
  for (const auto& row : rows) {
    out += fmt::format("{:<{}}", row.label, label_width);
    const auto m = row.result.mean.values();
    const auto s = row.result.std.values();
    for (int k = 0; k < 6; ++k) out += fmt::format("  {:>16}", fmt::format("{:.3f} ({:.3f})", m[k], s[k]));
    out += "\n";
    for (const auto& n : row.notes) out += "    note: " + n + "\n";
  }
  return out;
}

std::string report_csv(const MetricsReport& r) {
  std::string out;
  for (std::size_t k = 0; k < kMetricNames.size(); ++k) out += (k ? "," : "") + std::string(kMetricNames[k]);
  out += "\n";
  const auto v = r.values();
  for (int k = 0; k < 6; ++k) out += fmt::format("{}{:.17g}", k ? "," : "", v[k]);
  out += "\n";
  return out;
}

std::optional<MetricsReport> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string header, line;
  if (!std::getline(in, header) || !std::getline(in, line)) return std::nullopt;
  std::string expected;
  for (std::size_t k = 0; k < kMetricNames.size(); ++k) expected += (k ? "," : "") + std::string(kMetricNames[k]);
  if (header != expected) return std::nullopt;
  std::array<double, 6> v{};
  std::istringstream fields(line);
  std::string cell;
  for (int k = 0; k < 6; ++k) {
    if (!std::getline(fields, cell, ',')) return std::nullopt;
    try {
      v[k] = std::stod(cell);
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  return MetricsReport::from_values(v);
}

}  // namespace mtseg
