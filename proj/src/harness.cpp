#include "echoplan/harness.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace echoplan::harness {

using json = nlohmann::json;

std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void RunManifest::write(const std::string& path) const {
  json j = {{"command", command},
            {"config_hash", config_hash},
            {"dataset_hash", dataset_hash},
            {"outputs", outputs},
            {"wall_time_s", wall_time_s}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << j.dump(2) << "\n";
}

namespace {

constexpr int kWidth = 720;
constexpr int kHeight = 420;
constexpr int kMargin = 50;
const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

void svg_header(std::ofstream& out, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
      << "</text>\n";
}

}  // namespace

void write_line_chart_svg(const std::string& path, const std::vector<Series>& series, const std::string& title) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const Series& s : series) {
    for (double v : s.x) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double x) { return kMargin + (x - xmin) / (xmax - xmin) * (kWidth - 2 * kMargin); };
  auto py = [&](double y) { return kHeight - kMargin - (y - ymin) / (ymax - ymin) * (kHeight - 2 * kMargin); };

  svg_header(out, title);
  out << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\"" << kWidth - kMargin << "\" y2=\""
      << kHeight - kMargin << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\""
      << kHeight - kMargin << "\" stroke=\"black\"/>\n";
  int ci = 0;
  for (const Series& s : series) {
    const char* color = kColors[ci % 6];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) out << px(s.x[i]) << "," << py(s.y[i]) << " ";
    out << "\"/>\n";
    out << "<text x=\"" << kWidth - kMargin + 4 << "\" y=\"" << kMargin + 16 * ci << "\" font-size=\"11\" fill=\""
        << color << "\" text-anchor=\"end\">" << s.label << "</text>\n";
    ++ci;
  }
  out << "</svg>\n";
}

void write_bar_chart_svg(const std::string& path, const std::vector<std::pair<std::string, double>>& bars,
                         const std::string& title) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  double ymax = 1e-12;
  for (const auto& [label, v] : bars) ymax = std::max(ymax, v);
  svg_header(out, title);
  double bw = (kWidth - 2.0 * kMargin) / std::max<std::size_t>(1, bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    double h = bars[i].second / ymax * (kHeight - 2.0 * kMargin);
    double x = kMargin + i * bw;
    out << "<rect x=\"" << x + bw * 0.15 << "\" y=\"" << kHeight - kMargin - h << "\" width=\"" << bw * 0.7
        << "\" height=\"" << h << "\" fill=\"" << kColors[i % 6] << "\"/>\n";
    out << "<text x=\"" << x + bw / 2 << "\" y=\"" << kHeight - kMargin + 16
        << "\" text-anchor=\"middle\" font-size=\"11\">" << bars[i].first << "</text>\n";
    out << "<text x=\"" << x + bw / 2 << "\" y=\"" << kHeight - kMargin - h - 4
        << "\" text-anchor=\"middle\" font-size=\"11\">" << bars[i].second << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace echoplan::harness
