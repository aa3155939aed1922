#pragma once

#include <string>
#include <vector>

namespace racerl::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Standalone SVG with one <polyline> per series. Non-finite points are skipped.
std::string line_plot_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                          const std::vector<Series>& series, int width = 800, int height = 450);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 if absent
  /// Column as numbers; cells that do not parse (e.g. "DNF") become NaN.
  std::vector<double> numbers(int column) const;
};

/// Throws std::runtime_error for a missing file or a CSV without data rows.
CsvTable read_csv(const std::string& path);

/// Renders a CSV written by this project to SVG: training metrics (return plus
/// 5-episode moving average), telemetry (steer/throttle/brake traces),
/// generalization results (lap time per checkpoint and track), or any other
/// table as column-vs-first-column lines. Returns the SVG text.
std::string plot_csv(const CsvTable& table, const std::string& title);

}  // namespace racerl::plot
