#include "privlm/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace privlm {
namespace {

constexpr double kWidth = 640;
constexpr double kHeight = 400;
constexpr double kLeft = 70;
constexpr double kRight = 150;
constexpr double kTop = 40;
constexpr double kBottom = 60;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};

const char* color(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double lo_x, hi_x, lo_y, hi_y;

  double px(double x) const {
    const double span = hi_x > lo_x ? hi_x - lo_x : 1.0;
    return kLeft + (x - lo_x) / span * (kWidth - kLeft - kRight);
  }
  double py(double y) const {
    const double span = hi_y > lo_y ? hi_y - lo_y : 1.0;
    return kHeight - kBottom - (y - lo_y) / span * (kHeight - kTop - kBottom);
  }
};

void header(std::ostringstream& out, const std::string& title, const std::string& x_label,
            const std::string& y_label) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << escape(title) << "</text>\n";
  out << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 15
      << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
  out << "<text transform=\"translate(18," << (kTop + kHeight - kBottom) / 2
      << ") rotate(-90)\" text-anchor=\"middle\">" << escape(y_label) << "</text>\n";
}

void y_axis(std::ostringstream& out, const Frame& f) {
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
      << kHeight - kBottom << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\""
      << kWidth - kRight << "\" y2=\"" << kHeight - kBottom << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = f.lo_y + (f.hi_y - f.lo_y) * i / 5.0;
    const double y = f.py(v);
    out << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << y << "\" x2=\"" << kWidth - kRight
        << "\" y2=\"" << y << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << kLeft - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt(v)
        << "</text>\n";
  }
}

void legend(std::ostringstream& out, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = kTop + 10 + 20.0 * static_cast<double>(i);
    out << "<rect x=\"" << kWidth - kRight + 15 << "\" y=\"" << y - 9 << "\" width=\"12\" "
        << "height=\"12\" fill=\"" << color(i) << "\"/>\n";
    out << "<text x=\"" << kWidth - kRight + 32 << "\" y=\"" << y + 1 << "\">"
        << escape(names[i]) << "</text>\n";
  }
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<LineSeries>& series) {
  Frame f{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(), 0.0,
          -std::numeric_limits<double>::infinity()};
  for (const auto& s : series) {
    for (double x : s.x) {
      f.lo_x = std::min(f.lo_x, x);
      f.hi_x = std::max(f.hi_x, x);
    }
    for (double y : s.y) f.hi_y = std::max(f.hi_y, y);
  }
  if (!std::isfinite(f.lo_x)) f = Frame{0, 1, 0, 1};
  if (!(f.hi_y > 0.0)) f.hi_y = 1.0;
  f.hi_y *= 1.05;

  std::ostringstream out;
  header(out, title, x_label, y_label);
  y_axis(out, f);
  std::vector<double> ticks;
  for (const auto& s : series) ticks.insert(ticks.end(), s.x.begin(), s.x.end());
  std::sort(ticks.begin(), ticks.end());
  ticks.erase(std::unique(ticks.begin(), ticks.end()), ticks.end());
  for (double x : ticks) {
    out << "<text x=\"" << f.px(x) << "\" y=\"" << kHeight - kBottom + 16
        << "\" text-anchor=\"middle\">" << fmt(x) << "</text>\n";
  }
  std::vector<std::string> names;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    names.push_back(s.name);
    const std::size_t n = std::min(s.x.size(), s.y.size());
    out << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << color(i) << "\" points=\"";
    for (std::size_t k = 0; k < n; ++k) out << (k ? " " : "") << f.px(s.x[k]) << ',' << f.py(s.y[k]);
    out << "\"/>\n";
    for (std::size_t k = 0; k < n; ++k) {
      out << "<circle cx=\"" << f.px(s.x[k]) << "\" cy=\"" << f.py(s.y[k]) << "\" r=\"3\" fill=\""
          << color(i) << "\"/>\n";
    }
  }
  legend(out, names);
  out << "</svg>\n";
  return out.str();
}

std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          const std::vector<std::string>& categories,
                          const std::vector<BarSeries>& series) {
  Frame f{0.0, static_cast<double>(categories.size()), 0.0, 0.0};
  for (const auto& s : series) {
    for (double v : s.values) {
      if (std::isfinite(v)) {
        f.lo_y = std::min(f.lo_y, v);
        f.hi_y = std::max(f.hi_y, v);
      }
    }
  }
  if (f.hi_y <= f.lo_y) f.hi_y = f.lo_y + 1.0;
  const double pad = 0.05 * (f.hi_y - f.lo_y);
  f.hi_y += pad;
  if (f.lo_y < 0.0) f.lo_y -= pad;

  std::ostringstream out;
  header(out, title, "", y_label);
  y_axis(out, f);
  const double group = f.px(1.0) - f.px(0.0);
  const double bar = series.empty() ? 0.0 : 0.8 * group / static_cast<double>(series.size());
  for (std::size_t c = 0; c < categories.size(); ++c) {
    out << "<text x=\"" << f.px(static_cast<double>(c) + 0.5) << "\" y=\""
        << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">" << escape(categories[c])
        << "</text>\n";
  }
  std::vector<std::string> names;
  for (std::size_t i = 0; i < series.size(); ++i) {
    names.push_back(series[i].name);
    for (std::size_t c = 0; c < categories.size() && c < series[i].values.size(); ++c) {
      const double v = series[i].values[c];
      if (!std::isfinite(v)) continue;
      const double x = f.px(static_cast<double>(c)) + 0.1 * group + bar * static_cast<double>(i);
      const double y0 = f.py(0.0);
      const double y1 = f.py(v);
      out << "<rect x=\"" << x << "\" y=\"" << std::min(y0, y1) << "\" width=\"" << bar
          << "\" height=\"" << std::abs(y1 - y0) << "\" fill=\"" << color(i) << "\"/>\n";
    }
  }
  legend(out, names);
  out << "</svg>\n";
  return out.str();
}

}  // namespace privlm
