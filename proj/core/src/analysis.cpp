#include "lsk/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lsk/tensor_io.hpp"

namespace lsk {

double BoxAnnotation::area() const {
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) {
    const int j = (i + 1) % 4;
    acc += polygon[static_cast<std::size_t>(2 * i)] * polygon[static_cast<std::size_t>(2 * j + 1)];
    acc -= polygon[static_cast<std::size_t>(2 * j)] * polygon[static_cast<std::size_t>(2 * i + 1)];
  }
  return std::abs(acc) * 0.5;
}

std::vector<BoxAnnotation> parse_dota_annotations(std::istream& is) {
  std::vector<BoxAnnotation> boxes;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line.rfind("imagesource:", 0) == 0 || line.rfind("gsd:", 0) == 0) continue;
    std::istringstream ls(line);
    BoxAnnotation b;
    for (double& coord : b.polygon) {
      if (!(ls >> coord))
        throw IoError("DOTA annotation line " + std::to_string(line_no) +
                      ": expected 8 coordinates");
    }
    if (!(ls >> b.category))
      throw IoError("DOTA annotation line " + std::to_string(line_no) + ": missing category");
    if (!(ls >> b.difficulty)) b.difficulty = 0;
    boxes.push_back(std::move(b));
  }
  return boxes;
}

std::vector<BoxAnnotation> load_dota_annotations(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open annotation file: " + path);
  return parse_dota_annotations(f);
}

Tensor upsample_nearest(const Tensor& x, i64 out_h, i64 out_w) {
  require(out_h >= 1 && out_w >= 1, "upsample_nearest: output dims must be >= 1");
  Tensor y({x.shape.n, x.shape.c, out_h, out_w});
  for (i64 n = 0; n < x.shape.n; ++n)
    for (i64 c = 0; c < x.shape.c; ++c)
      for (i64 oy = 0; oy < out_h; ++oy) {
        const i64 sy = oy * x.shape.h / out_h;
        for (i64 ox = 0; ox < out_w; ++ox) {
          const i64 sx = ox * x.shape.w / out_w;
          y.at(n, c, oy, ox) = x.at(n, c, sy, sx);
        }
      }
  return y;
}

namespace {

// category -> ids of images annotated with that category only
std::map<std::string, std::vector<const ImageTrace*>> group_single_category(
    std::span<const ImageTrace> images,
    const std::map<std::string, std::vector<BoxAnnotation>>& annotations_by_image) {
  std::map<std::string, std::vector<const ImageTrace*>> groups;
  for (const ImageTrace& img : images) {
    const auto it = annotations_by_image.find(img.image_id);
    if (it == annotations_by_image.end() || it->second.empty()) continue;
    const std::string& cat = it->second.front().category;
    const bool single =
        std::all_of(it->second.begin(), it->second.end(),
                    [&cat](const BoxAnnotation& b) { return b.category == cat; });
    if (single) groups[cat].push_back(&img);
  }
  return groups;
}

double map_abs_sum_upsampled(const Tensor& map, i64 out_h, i64 out_w) {
  double acc = 0.0;
  if (map.shape.h == out_h && map.shape.w == out_w) {
    for (double v : map.data) acc += std::abs(v);
    return acc;
  }
  const Tensor up = upsample_nearest(map, out_h, out_w);
  for (double v : up.data) acc += std::abs(v);
  return acc;
}

}  // namespace

std::map<std::string, RcEntry> rf_box_ratio(
    std::span<const ImageTrace> images,
    const std::map<std::string, std::vector<BoxAnnotation>>& annotations_by_image,
    RfWeighting weighting) {
  const auto groups = group_single_category(images, annotations_by_image);
  std::map<std::string, RcEntry> result;
  for (const auto& [cat, members] : groups) {
    double ratio_sum = 0.0;
    for (const ImageTrace* img : members) {
      require(img->input_h >= 1 && img->input_w >= 1,
              "rf_box_ratio: trace for " + img->image_id + " lacks input dimensions");
      double activation = 0.0;
      for (const BlockTraceEntry& block : img->blocks) {
        const auto& maps = block.trace.selection_maps;
        require(maps.size() == block.trace.rf.size(),
                "rf_box_ratio: branch count does not match rf list");
        for (std::size_t b = 0; b < maps.size(); ++b) {
          const double rf = static_cast<double>(block.trace.rf[b]);
          const double wgt = weighting == RfWeighting::kLinear ? rf : rf * rf;
          activation += wgt * map_abs_sum_upsampled(maps[b], img->input_h, img->input_w);
        }
      }
      double box_area = 0.0;
      for (const BoxAnnotation& b : annotations_by_image.at(img->image_id))
        box_area += b.area();
      require(box_area > 0.0, "rf_box_ratio: zero annotated area for image " + img->image_id);
      ratio_sum += activation / box_area;
    }
    RcEntry e;
    e.value = ratio_sum / static_cast<double>(members.size());
    e.images = static_cast<int>(members.size());
    result[cat] = e;
  }
  double max_val = 0.0;
  for (const auto& [cat, e] : result) max_val = std::max(max_val, e.value);
  for (auto& [cat, e] : result) e.normalized = max_val > 0.0 ? e.value / max_val : 0.0;
  return result;
}

std::map<std::string, std::vector<DeltaEntry>> kernel_selection_difference(
    std::span<const ImageTrace> images,
    const std::map<std::string, std::vector<BoxAnnotation>>& annotations_by_image) {
  const auto groups = group_single_category(images, annotations_by_image);
  std::map<std::string, std::vector<DeltaEntry>> result;
  for (const auto& [cat, members] : groups) {
    // (stage, block) -> accumulated mean-abs-difference and image count
    std::map<std::pair<int, int>, std::pair<double, int>> acc;
    for (const ImageTrace* img : members) {
      for (const BlockTraceEntry& block : img->blocks) {
        const auto& maps = block.trace.selection_maps;
        require(maps.size() == 2, "kernel_selection_difference requires exactly 2 branches, "
                                  "block has " +
                                      std::to_string(maps.size()));
        // larger kernel = branch with the larger theoretical RF
        const std::size_t larger = block.trace.rf[1] >= block.trace.rf[0] ? 1 : 0;
        const std::size_t smaller = 1 - larger;
        const Tensor& a = maps[larger];
        const Tensor& b = maps[smaller];
        require(a.shape == b.shape, "kernel_selection_difference: branch map shape mismatch");
        double diff = 0.0;
        for (std::size_t i = 0; i < a.data.size(); ++i)
          diff += std::abs(a.data[i] - b.data[i]);
        diff /= static_cast<double>(a.data.size());
        auto& slot = acc[{block.stage, block.block}];
        slot.first += diff;
        slot.second += 1;
      }
    }
    std::vector<DeltaEntry> entries;
    double max_val = 0.0;
    for (const auto& [key, sum_count] : acc) {
      DeltaEntry e;
      e.stage = key.first;
      e.block = key.second;
      e.value = sum_count.first / static_cast<double>(sum_count.second);
      max_val = std::max(max_val, e.value);
      entries.push_back(e);
    }
    for (DeltaEntry& e : entries) e.normalized = max_val > 0.0 ? e.value / max_val : 0.0;
    result[cat] = std::move(entries);
  }
  return result;
}

void write_pgm(const std::string& path, const Tensor& map) {
  require(map.shape.n == 1 && map.shape.c == 1, "write_pgm: map must be (1,1,h,w), got " +
                                                    map.shape.str());
  double lo = map.data.empty() ? 0.0 : map.data.front();
  double hi = lo;
  for (double v : map.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double range = hi - lo;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "P5\n" << map.shape.w << " " << map.shape.h << "\n255\n";
  for (double v : map.data) {
    // zero range is guarded to 0 rather than dividing by it
    const int g = range > 0.0 ? static_cast<int>(std::lround((v - lo) / range * 255.0)) : 0;
    f.put(static_cast<char>(std::clamp(g, 0, 255)));
  }
  if (!f) throw IoError("PGM write failed: " + path);
}

std::vector<std::string> export_activation_maps(const ImageTrace& trace,
                                                const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
  std::vector<std::string> written;
  for (const BlockTraceEntry& block : trace.blocks) {
    for (std::size_t b = 0; b < block.trace.selection_maps.size(); ++b) {
      const Tensor& map = block.trace.selection_maps[b];
      const std::string stem = trace.image_id + "_s" + std::to_string(block.stage) + "b" +
                               std::to_string(block.block) + "_branch" + std::to_string(b);
      const std::string tensor_path = (fs::path(out_dir) / (stem + ".lskt")).string();
      write_lskt_file(tensor_path, map);
      written.push_back(tensor_path);
      // PGM renders the first batch element, first channel
      Tensor one({1, 1, map.shape.h, map.shape.w});
      for (i64 y = 0; y < map.shape.h; ++y)
        for (i64 x = 0; x < map.shape.w; ++x) one.at(0, 0, y, x) = map.at(0, 0, y, x);
      const std::string pgm_path = (fs::path(out_dir) / (stem + ".pgm")).string();
      write_pgm(pgm_path, one);
      written.push_back(pgm_path);
    }
  }
  return written;
}

}  // namespace lsk
