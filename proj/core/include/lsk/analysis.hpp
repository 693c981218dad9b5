#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lsk/backbone.hpp"

namespace lsk {

// One annotated oriented box, DOTA style: four polygon corners, a category
// name, and a difficulty flag.
struct BoxAnnotation {
  std::string category;
  std::array<double, 8> polygon{};  // x1 y1 x2 y2 x3 y3 x4 y4
  int difficulty = 0;

  double area() const;  // shoelace formula
};

// DOTA annotation text: optional "imagesource:"/"gsd:" header lines, then one
// box per line: 8 coordinates, category, difficulty.
std::vector<BoxAnnotation> parse_dota_annotations(std::istream& is);
std::vector<BoxAnnotation> load_dota_annotations(const std::string& path);

// Selection-mask maps recorded for one input image.
struct ImageTrace {
  std::string image_id;
  int input_h = 0;
  int input_w = 0;
  ActivationTrace blocks;
};

// Whether a branch's activation mass is weighted by RF_n (the formula as
// printed) or RF_n^2 (the area reading).
enum class RfWeighting { kLinear, kArea };

// Mean over single-category images of A_i / B_i, where A_i sums
// |mask| * weight(RF_n) over every block and branch (maps nearest-neighbor
// upsampled to input resolution first) and B_i is the total annotated box
// area. Categories with no qualifying image are absent from the result.
struct RcEntry {
  double value = 0.0;
  double normalized = 0.0;  // value / max over categories
  int images = 0;
};
std::map<std::string, RcEntry> rf_box_ratio(
    std::span<const ImageTrace> images,
    const std::map<std::string, std::vector<BoxAnnotation>>& annotations_by_image,
    RfWeighting weighting = RfWeighting::kLinear);

// Per-block mean |larger-kernel mask - smaller-kernel mask| over the
// qualifying images of each category. Requires exactly two branches.
struct DeltaEntry {
  int stage = 0;
  int block = 0;
  double value = 0.0;
  double normalized = 0.0;  // value / max over blocks of the same category
};
std::map<std::string, std::vector<DeltaEntry>> kernel_selection_difference(
    std::span<const ImageTrace> images,
    const std::map<std::string, std::vector<BoxAnnotation>>& annotations_by_image);

// Writes one LSKT tensor and one PGM rendering per branch per block into
// out_dir; returns the paths written.
std::vector<std::string> export_activation_maps(const ImageTrace& trace,
                                                const std::string& out_dir);

// 8-bit binary PGM, min-max normalized per map; a zero range writes all 0.
void write_pgm(const std::string& path, const Tensor& map);

Tensor upsample_nearest(const Tensor& x, i64 out_h, i64 out_w);

}  // namespace lsk
