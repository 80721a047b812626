#pragma once

#include <string>
#include <vector>

namespace eqm::svg {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

// Static line chart: framed plot area, 5 ticks per axis, one polyline per
// series with a small legend. log_y switches the y axis to log10 and then
// requires positive values. Writes a self-contained SVG document.
void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series, bool log_y = false);

}  // namespace eqm::svg
