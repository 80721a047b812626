#include "eqm/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace eqm::svg {

namespace {

constexpr double kWidth = 720.0, kHeight = 460.0;
constexpr double kLeft = 80.0, kRight = 560.0, kTop = 60.0, kBottom = 400.0;

const char* kPalette[6] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&')
      out += "&amp;";
    else if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else
      out += c;
  }
  return out;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series, bool log_y) {
  if (series.empty()) throw std::invalid_argument("svg: no series");
  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
  bool first = true;
  for (const Series& s : series) {
    if (s.x.empty() || s.x.size() != s.y.size())
      throw std::invalid_argument("svg: series needs matching nonempty x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      double y = s.y[i];
      if (log_y) {
        if (y <= 0.0) throw std::invalid_argument("svg: log axis needs positive values");
        y = std::log10(y);
      }
      if (first) {
        xmin = xmax = s.x[i];
        ymin = ymax = y;
        first = false;
      } else {
        xmin = std::min(xmin, s.x[i]);
        xmax = std::max(xmax, s.x[i]);
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
      }
    }
  }
  if (xmax == xmin) {
    xmin -= 1.0;
    xmax += 1.0;
  }
  if (ymax == ymin) {
    ymin -= 1.0;
    ymax += 1.0;
  }
  auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * (kRight - kLeft); };
  auto py = [&](double y) {
    if (log_y) y = std::log10(y);
    return kBottom - (y - ymin) / (ymax - ymin) * (kBottom - kTop);
  };

  std::ofstream os(path);
  if (!os) throw std::runtime_error("svg: cannot open " + path + " for writing");
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << num(kWidth) << " "
     << num(kHeight) << "\" font-family=\"sans-serif\" font-size=\"13\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num((kLeft + kRight) / 2) << "\" y=\"30\" text-anchor=\"middle\" "
     << "font-size=\"16\">" << escape(title) << "</text>\n";
  os << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\""
     << num(kRight - kLeft) << "\" height=\"" << num(kBottom - kTop)
     << "\" fill=\"none\" stroke=\"#333\"/>\n";

  for (int t = 0; t < 5; ++t) {
    double fx = xmin + (xmax - xmin) * t / 4.0;
    double gx = px(fx);
    os << "<line x1=\"" << num(gx) << "\" y1=\"" << num(kBottom) << "\" x2=\"" << num(gx)
       << "\" y2=\"" << num(kBottom + 5) << "\" stroke=\"#333\"/>\n";
    os << "<text x=\"" << num(gx) << "\" y=\"" << num(kBottom + 20)
       << "\" text-anchor=\"middle\">" << num(fx) << "</text>\n";
    double fy = ymin + (ymax - ymin) * t / 4.0;
    double vy = log_y ? std::pow(10.0, fy) : fy;
    double gy = kBottom - (fy - ymin) / (ymax - ymin) * (kBottom - kTop);
    os << "<line x1=\"" << num(kLeft - 5) << "\" y1=\"" << num(gy) << "\" x2=\"" << num(kLeft)
       << "\" y2=\"" << num(gy) << "\" stroke=\"#333\"/>\n";
    os << "<text x=\"" << num(kLeft - 9) << "\" y=\"" << num(gy + 4)
       << "\" text-anchor=\"end\">" << num(vy) << "</text>\n";
  }
  os << "<text x=\"" << num((kLeft + kRight) / 2) << "\" y=\"" << num(kHeight - 15)
     << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
  os << "<text x=\"20\" y=\"" << num((kTop + kBottom) / 2)
     << "\" text-anchor=\"middle\" transform=\"rotate(-90 20 " << num((kTop + kBottom) / 2)
     << ")\">" << escape(y_label) << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % 6];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      if (i) os << ' ';
      os << num(px(series[s].x[i])) << ',' << num(py(series[s].y[i]));
    }
    os << "\"/>\n";
    for (std::size_t i = 0; i < series[s].x.size(); ++i)
      os << "<circle cx=\"" << num(px(series[s].x[i])) << "\" cy=\"" << num(py(series[s].y[i]))
         << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
    double ly = kTop + 16.0 * (static_cast<double>(s) + 1.0);
    os << "<line x1=\"" << num(kRight + 10) << "\" y1=\"" << num(ly - 4) << "\" x2=\""
       << num(kRight + 34) << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << color
       << "\" stroke-width=\"1.8\"/>\n";
    os << "<text x=\"" << num(kRight + 40) << "\" y=\"" << num(ly) << "\">"
       << escape(series[s].label) << "</text>\n";
  }
  os << "</svg>\n";
  os.flush();
  if (!os) throw std::runtime_error("svg: write failed for " + path);
}

}  // namespace eqm::svg
