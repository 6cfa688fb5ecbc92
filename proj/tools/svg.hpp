#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mtseg::cli {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Static line chart with axes, ticks and a legend.
void write_line_plot(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                     const std::vector<Series>& series);

}  // namespace mtseg::cli
