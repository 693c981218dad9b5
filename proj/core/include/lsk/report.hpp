#pragma once

#include <span>
#include <string>
#include <vector>

namespace lsk {

// Fixed-precision float formatting ("%.6g") so emitted reports are
// byte-stable across runs and build modes.
std::string format_g(double v);

struct BarDatum {
  std::string label;
  double value = 0.0;
};

// Static SVG bar chart; bar heights are proportional to values. Deterministic
// bytes for a fixed input. An empty series renders a "no data" annotation.
std::string svg_bar_chart(const std::string& title, std::span<const BarDatum> data);

// RFC-4180-ish CSV with a header row; fields containing commas or quotes are
// quoted.
std::string csv_table(const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows);

}  // namespace lsk
