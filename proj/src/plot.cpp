#include "racerl/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "racerl/harness.hpp"

namespace racerl::plot {

namespace {

const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

std::string line_plot_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                          const std::vector<Series>& series, int width, int height) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) throw std::runtime_error("plot: no finite data points");
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double left = 70, right = 20, top = 40, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
      << "</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + (x1 - x0) * k / 4.0, fy = y0 + (y1 - y0) * k / 4.0;
    svg << "<text x=\"" << num(sx(fx)) << "\" y=\"" << num(top + ph + 16) << "\" text-anchor=\"middle\">"
        << num(fx) << "</text>\n";
    svg << "<text x=\"" << num(left - 6) << "\" y=\"" << num(sy(fy) + 4) << "\" text-anchor=\"end\">" << num(fy)
        << "</text>\n";
  }
  svg << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">"
      << escape(xlabel) << "</text>\n";
  svg << "<text transform=\"translate(16," << num(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(ylabel) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % std::size(kColors)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      svg << (first ? "" : " ") << num(sx(s.x[i])) << ',' << num(sy(s.y[i]));
      first = false;
    }
    svg << "\"/>\n";
    svg << "<text x=\"" << num(left + 10) << "\" y=\"" << num(top + 16 + 14.0 * static_cast<double>(k))
        << "\" fill=\"" << color << "\">" << escape(s.name) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

int CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

std::vector<double> CsvTable::numbers(int c) const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    double v = std::numeric_limits<double>::quiet_NaN();
    if (c >= 0 && static_cast<std::size_t>(c) < r.size() && !r[static_cast<std::size_t>(c)].empty()) {
      char* end = nullptr;
      const char* s = r[static_cast<std::size_t>(c)].c_str();
      const double parsed = std::strtod(s, &end);
      if (end != s && *end == '\0') v = parsed;
    }
    out.push_back(v);
  }
  return out;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty CSV");
  t.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split(line));
  if (t.rows.empty()) throw std::runtime_error(path + ": CSV has no data rows");
  return t;
}

std::string plot_csv(const CsvTable& t, const std::string& title) {
  if (t.rows.empty()) throw std::runtime_error("plot: CSV has no data rows");
  if (t.column("episode") >= 0 && t.column("return") >= 0 && t.column("critic_loss_mean") >= 0) {
    const auto x = t.numbers(t.column("episode"));
    const auto y = t.numbers(t.column("return"));
    return line_plot_svg(title, "episode", "return",
                         {{"return", x, y}, {"moving average (5)", x, harness::moving_average(y, 5)}});
  }
  if (t.column("steer") >= 0 && t.column("throttle") >= 0 && t.column("brake") >= 0 && t.column("t") >= 0) {
    const auto x = t.numbers(t.column("t"));
    return line_plot_svg(title, "time [s]", "output",
                         {{"steer", x, t.numbers(t.column("steer"))},
                          {"throttle", x, t.numbers(t.column("throttle"))},
                          {"brake", x, t.numbers(t.column("brake"))}});
  }
  if (t.column("episode") >= 0 && t.column("track") >= 0 && t.column("best_lap") >= 0) {
    std::map<std::string, Series> by_track;
    std::vector<std::string> order;
    const auto ep = t.numbers(t.column("episode"));
    const auto lap = t.numbers(t.column("best_lap"));
    const auto tc = static_cast<std::size_t>(t.column("track"));
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const std::string& name = t.rows[i].at(tc);
      if (!by_track.count(name)) {
        order.push_back(name);
        by_track[name].name = name;
      }
      by_track[name].x.push_back(ep[i]);
      by_track[name].y.push_back(lap[i]);
    }
    std::vector<Series> series;
    for (const auto& n : order) series.push_back(by_track[n]);
    return line_plot_svg(title, "checkpoint episode", "best lap [s]", series);
  }
  const auto x = t.numbers(0);
  std::vector<Series> series;
  for (std::size_t c = 1; c < t.header.size(); ++c) {
    auto y = t.numbers(static_cast<int>(c));
    if (std::any_of(y.begin(), y.end(), [](double v) { return std::isfinite(v); }))
      series.push_back({t.header[c], x, std::move(y)});
  }
  if (series.empty()) throw std::runtime_error("plot: no numeric columns");
  return line_plot_svg(title, t.header.front(), "value", series);
}

}  // namespace racerl::plot
