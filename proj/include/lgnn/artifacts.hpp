#pragma once

#include <string>

#include "lgnn/analysis.hpp"
#include "lgnn/tensor.hpp"

namespace lgnn {

// Heat maps as row-major CSV (%.6e) with '#' metadata comment lines.
void save_heatmap_csv(const HeatMap& hm, const std::string& path);
HeatMap load_heatmap_csv(const std::string& path);

// 8-bit graymap, map min-max scaled to [0,255]; zero range maps to 128.
// Metadata carried as PNM comments.
void save_heatmap_pgm(const HeatMap& hm, const std::string& path);
Tensor load_pgm(const std::string& path);  // (h,w), raw byte values

// Binary portable pixmap for (3,h,w) images in [0,1].
void save_ppm(const Tensor& rgb, const std::string& path);
Tensor load_ppm(const std::string& path);  // (3,h,w), values k/255

}  // namespace lgnn
