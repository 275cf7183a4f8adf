#pragma once

// Minimal standalone SVG line charts: one polyline for the mean and one
// shaded min/max band per series.

#include <string>
#include <vector>

#include "dhh/evaluate/sweep.hpp"

namespace dhh::evaluate {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> low;
  std::vector<double> high;  // +inf is drawn as a band up to the top edge
};

struct Chart {
  std::string title;
  std::string stem;  // file-name stem, e.g. "mass_spring_sigma0.1"
  std::string x_label = "observations";
  std::string y_label = "log MSE";
  std::vector<Series> series;
};

std::string render_svg(const Chart& chart);

// One chart per (system, sigma) with one series per method label.
std::vector<Chart> charts_from_report(const SweepReport& report);

}  // namespace dhh::evaluate
