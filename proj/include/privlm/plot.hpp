#pragma once

#include <string>
#include <vector>

namespace privlm {

struct LineSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct BarSeries {
  std::string name;
  std::vector<double> values;  // one per category; NaN leaves a gap
};

// Minimal static SVG charts; output depends only on the inputs.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<LineSeries>& series);

std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          const std::vector<std::string>& categories,
                          const std::vector<BarSeries>& series);

}  // namespace privlm
