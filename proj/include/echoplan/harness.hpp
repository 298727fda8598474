#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace echoplan::harness {

// Exit codes shared by the CLI and its tests.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitValidation = 3;
inline constexpr int kExitNumeric = 4;

struct RunManifest {
  std::string command;
  std::uint64_t config_hash = 0;
  std::uint64_t dataset_hash = 0;
  std::vector<std::string> outputs;
  double wall_time_s = 0.0;

  void write(const std::string& path) const;
};

std::uint64_t fnv1a(const std::string& data);

// Minimal SVG chart emitters; every plot also gets its numeric data as CSV
// next to it.
struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

void write_line_chart_svg(const std::string& path, const std::vector<Series>& series, const std::string& title);
void write_bar_chart_svg(const std::string& path, const std::vector<std::pair<std::string, double>>& bars,
                         const std::string& title);

}  // namespace echoplan::harness
