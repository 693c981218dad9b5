#include "lsk/report.hpp"

#include <algorithm>
#include <cstdio>

namespace lsk {

std::string format_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
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

}  // namespace

std::string svg_bar_chart(const std::string& title, std::span<const BarDatum> data) {
  constexpr int kWidth = 640, kHeight = 360;
  constexpr int kMarginLeft = 48, kMarginRight = 16, kMarginTop = 40, kMarginBottom = 56;
  const int plot_w = kWidth - kMarginLeft - kMarginRight;
  const int plot_h = kHeight - kMarginTop - kMarginBottom;

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(kWidth) +
         "\" height=\"" + std::to_string(kHeight) + "\" viewBox=\"0 0 " +
         std::to_string(kWidth) + " " + std::to_string(kHeight) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + std::to_string(kWidth / 2) +
         "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
         xml_escape(title) + "</text>\n";

  if (data.empty()) {
    svg += "<text x=\"" + std::to_string(kWidth / 2) + "\" y=\"" +
           std::to_string(kHeight / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\" "
           "fill=\"#888\">no data</text>\n";
    svg += "</svg>\n";
    return svg;
  }

  double max_val = 0.0;
  for (const BarDatum& d : data) max_val = std::max(max_val, d.value);
  if (max_val <= 0.0) max_val = 1.0;

  const double slot = static_cast<double>(plot_w) / static_cast<double>(data.size());
  const double bar_w = slot * 0.7;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double h = data[i].value / max_val * plot_h;
    const double x = kMarginLeft + slot * static_cast<double>(i) + (slot - bar_w) / 2.0;
    const double y = kMarginTop + (plot_h - h);
    svg += "<rect x=\"" + format_g(x) + "\" y=\"" + format_g(y) + "\" width=\"" +
           format_g(bar_w) + "\" height=\"" + format_g(h) + "\" fill=\"#4878a8\"/>\n";
    svg += "<text x=\"" + format_g(x + bar_w / 2.0) + "\" y=\"" + format_g(y - 4.0) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
           format_g(data[i].value) + "</text>\n";
    svg += "<text x=\"" + format_g(x + bar_w / 2.0) + "\" y=\"" +
           std::to_string(kHeight - kMarginBottom + 16) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
           xml_escape(data[i].label) + "</text>\n";
  }
  svg += "<line x1=\"" + std::to_string(kMarginLeft) + "\" y1=\"" +
         std::to_string(kMarginTop + plot_h) + "\" x2=\"" + std::to_string(kWidth - kMarginRight) +
         "\" y2=\"" + std::to_string(kMarginTop + plot_h) + "\" stroke=\"#333\"/>\n";
  svg += "</svg>\n";
  return svg;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

}  // namespace

std::string csv_table(const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i > 0) out += ",";
    out += csv_field(header[i]);
  }
  out += "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i > 0) out += ",";
      out += csv_field(row[i]);
    }
    out += "\n";
  }
  return out;
}

}  // namespace lsk
