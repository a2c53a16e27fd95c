#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace ccsafe::svg {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
  std::string color = "#1f77b4";
  bool line = true;     // polyline through the points
  bool markers = true;  // circle per point
};

struct Plot {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  std::vector<Series> series;

  /// Standalone SVG document. Non-positive values are dropped on log axes.
  std::string render(int width = 640, int height = 420) const;
  void save(const std::filesystem::path& path) const;
};

}  // namespace ccsafe::svg
