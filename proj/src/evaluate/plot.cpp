#include "dhh/evaluate/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <fmt/format.h>

namespace dhh::evaluate {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 170.0;  // legend column
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

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

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void take(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void settle() {
    if (lo > hi) {
      lo = 0.0;
      hi = 1.0;
    } else if (lo == hi) {
      lo -= 1.0;
      hi += 1.0;
    }
  }
};

}  // namespace

std::string render_svg(const Chart& chart) {
  Range xr, yr;
  for (const Series& s : chart.series) {
    for (double v : s.x) xr.take(v);
    for (const auto* values : {&s.mean, &s.low, &s.high}) {
      for (double v : *values) yr.take(v);
    }
  }
  xr.settle();
  yr.settle();
  const double pad = 0.05 * (yr.hi - yr.lo);
  yr.lo -= pad;
  yr.hi += pad;

  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * plot_w; };
  // non-finite values (failed runs) are pinned to the top edge
  auto py = [&](double y) {
    if (!std::isfinite(y)) return kTop;
    return kTop + (yr.hi - y) / (yr.hi - yr.lo) * plot_h;
  };

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" "
      "viewBox=\"0 0 {:.0f} {:.0f}\">\n",
      kWidth, kHeight, kWidth, kHeight);
  svg += fmt::format("<rect width=\"{:.0f}\" height=\"{:.0f}\" fill=\"white\"/>\n", kWidth, kHeight);
  svg += fmt::format(
      "<text x=\"{:.2f}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" "
      "text-anchor=\"middle\">{}</text>\n",
      kLeft + plot_w / 2, escape(chart.title));

  // axes and ticks
  svg += fmt::format(
      "<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"none\" "
      "stroke=\"black\"/>\n",
      kLeft, kTop, plot_w, plot_h);
  constexpr int kTicks = 5;
  for (int i = 0; i < kTicks; ++i) {
    const double fx = xr.lo + (xr.hi - xr.lo) * i / (kTicks - 1);
    const double fy = yr.lo + (yr.hi - yr.lo) * i / (kTicks - 1);
    svg += fmt::format(
        "<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"11\" "
        "text-anchor=\"middle\">{:.3g}</text>\n",
        px(fx), kTop + plot_h + 16, fx);
    svg += fmt::format(
        "<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"11\" "
        "text-anchor=\"end\">{:.3g}</text>\n",
        kLeft - 6, py(fy) + 4, fy);
    svg += fmt::format(
        "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#dddddd\"/>\n",
        kLeft, py(fy), kLeft + plot_w, py(fy));
  }
  svg += fmt::format(
      "<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"12\" "
      "text-anchor=\"middle\">{}</text>\n",
      kLeft + plot_w / 2, kHeight - 12, escape(chart.x_label));
  svg += fmt::format(
      "<text x=\"16\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"12\" "
      "text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2f})\">{}</text>\n",
      kTop + plot_h / 2, kTop + plot_h / 2, escape(chart.y_label));

  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const Series& s = chart.series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::string band, line;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      band += fmt::format("{:.2f},{:.2f} ", px(s.x[i]), py(s.high[i]));
    }
    for (std::size_t i = s.x.size(); i-- > 0;) {
      band += fmt::format("{:.2f},{:.2f} ", px(s.x[i]), py(s.low[i]));
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      line += fmt::format("{:.2f},{:.2f} ", px(s.x[i]), py(s.mean[i]));
    }
    if (!band.empty()) band.pop_back();
    if (!line.empty()) line.pop_back();
    svg += fmt::format("<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.2\" stroke=\"none\"/>\n",
                       band, color);
    svg += fmt::format(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n", line, color);
    const double ly = kTop + 14.0 + 18.0 * static_cast<double>(k);
    svg += fmt::format(
        "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"{}\" "
        "stroke-width=\"2\"/>\n",
        kWidth - kRight + 12, ly, kWidth - kRight + 32, ly, color);
    svg += fmt::format(
        "<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
        kWidth - kRight + 38, ly + 4, escape(s.label));
  }
  svg += "</svg>\n";
  return svg;
}

std::vector<Chart> charts_from_report(const SweepReport& report) {
  std::vector<Chart> charts;
  for (const CellStats& c : report.cells) {
    const std::string stem = fmt::format("{}_sigma{}", c.system, c.sigma);
    auto chart = std::find_if(charts.begin(), charts.end(),
                              [&](const Chart& ch) { return ch.stem == stem; });
    if (chart == charts.end()) {
      Chart ch;
      ch.title = fmt::format("{}, sigma = {}", c.system, c.sigma);
      ch.stem = stem;
      charts.push_back(std::move(ch));
      chart = charts.end() - 1;
    }
    auto series = std::find_if(chart->series.begin(), chart->series.end(),
                               [&](const Series& s) { return s.label == c.method; });
    if (series == chart->series.end()) {
      chart->series.push_back({c.method, {}, {}, {}, {}});
      series = chart->series.end() - 1;
    }
    series->x.push_back(c.n_points);
    series->mean.push_back(c.mean);
    series->low.push_back(c.min);
    series->high.push_back(c.max);
  }
  // order points of every series by sampling rate
  for (Chart& ch : charts) {
    for (Series& s : ch.series) {
      std::vector<std::size_t> idx(s.x.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s.x[a] < s.x[b]; });
      Series sorted{s.label, {}, {}, {}, {}};
      for (auto i : idx) {
        sorted.x.push_back(s.x[i]);
        sorted.mean.push_back(s.mean[i]);
        sorted.low.push_back(s.low[i]);
        sorted.high.push_back(s.high[i]);
      }
      s = std::move(sorted);
    }
  }
  return charts;
}

}  // namespace dhh::evaluate
