#include "lgnn/artifacts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lgnn {

namespace {

void write_meta_comments(std::ostream& out, const HeatMap& hm) {
  out << "# layer: " << hm.layer << "\n";
  out << "# kind: " << hm.kind << "\n";
  if (hm.row >= 0) out << "# row: " << hm.row << "\n";
  out << "# grid: " << hm.grid.dim(0) << " " << hm.grid.dim(1) << "\n";
}

// next whitespace-separated PNM token, skipping '#' comments
std::string pnm_token(std::istream& in) {
  std::string tok;
  for (;;) {
    const int c = in.get();
    if (c == EOF) {
      if (tok.empty()) throw FormatError("pnm: truncated header");
      return tok;
    }
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
}

}  // namespace

void save_heatmap_csv(const HeatMap& hm, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("csv: cannot open " + path + " for writing");
  write_meta_comments(out, hm);
  const int64_t m = hm.grid.dim(0), n = hm.grid.dim(1);
  char buf[32];
  for (int64_t r = 0; r < m; ++r) {
    for (int64_t c = 0; c < n; ++c) {
      std::snprintf(buf, sizeof(buf), "%.6e", static_cast<double>(hm.grid(r, c)));
      out << buf << (c + 1 < n ? "," : "");
    }
    out << "\n";
  }
  if (!out) throw FormatError("csv: short write to " + path);
}

HeatMap load_heatmap_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("csv: cannot open " + path);
  HeatMap hm;
  int64_t m = -1, n = -1;
  std::vector<float> values;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string key;
      ls >> key;
      if (key == "layer:") ls >> hm.layer;
      else if (key == "kind:") ls >> hm.kind;
      else if (key == "row:") ls >> hm.row;
      else if (key == "grid:") ls >> m >> n;
      continue;
    }
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) values.push_back(std::stof(cell));
  }
  if (m <= 0 || n <= 0 || static_cast<int64_t>(values.size()) != m * n)
    throw FormatError("csv: malformed heat map in " + path);
  hm.grid = Tensor({m, n}, std::move(values));
  return hm;
}

void save_heatmap_pgm(const HeatMap& hm, const std::string& path) {
  const int64_t m = hm.grid.dim(0), n = hm.grid.dim(1);
  float lo = hm.grid[0], hi = hm.grid[0];
  for (int64_t i = 0; i < hm.grid.size(); ++i) {
    lo = std::min(lo, hm.grid[i]);
    hi = std::max(hi, hm.grid[i]);
  }
  const float range = hi - lo;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("pgm: cannot open " + path + " for writing");
  out << "P5\n";
  write_meta_comments(out, hm);
  out << n << " " << m << "\n255\n";
  for (int64_t i = 0; i < hm.grid.size(); ++i) {
    const int v = range > 0 ? static_cast<int>(std::lround((hm.grid[i] - lo) / range * 255.f))
                            : 128;
    out.put(static_cast<char>(std::clamp(v, 0, 255)));
  }
  if (!out) throw FormatError("pgm: short write to " + path);
}

Tensor load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("pgm: cannot open " + path);
  if (pnm_token(in) != "P5") throw FormatError("pgm: bad magic in " + path);
  const int64_t w = std::stoll(pnm_token(in));
  const int64_t h = std::stoll(pnm_token(in));
  if (std::stoll(pnm_token(in)) != 255) throw FormatError("pgm: unsupported maxval");
  Tensor img({h, w});
  std::vector<uint8_t> raw(static_cast<size_t>(h * w));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw FormatError("pgm: truncated pixel data in " + path);
  for (int64_t i = 0; i < img.size(); ++i) img[i] = raw[static_cast<size_t>(i)];
  return img;
}

void save_ppm(const Tensor& rgb, const std::string& path) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("ppm: image must be (3,h,w)");
  const int64_t h = rgb.dim(1), w = rgb.dim(2);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("ppm: cannot open " + path + " for writing");
  out << "P6\n" << w << " " << h << "\n255\n";
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        const float v = std::clamp(rgb(c, y, x), 0.f, 1.f);
        out.put(static_cast<char>(std::lround(v * 255.f)));
      }
  if (!out) throw FormatError("ppm: short write to " + path);
}

Tensor load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("ppm: cannot open " + path);
  if (pnm_token(in) != "P6") throw FormatError("ppm: bad magic in " + path);
  const int64_t w = std::stoll(pnm_token(in));
  const int64_t h = std::stoll(pnm_token(in));
  if (std::stoll(pnm_token(in)) != 255) throw FormatError("ppm: unsupported maxval");
  Tensor img({3, h, w});
  std::vector<uint8_t> raw(static_cast<size_t>(3 * h * w));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw FormatError("ppm: truncated pixel data in " + path);
  int64_t i = 0;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) img(c, y, x) = raw[static_cast<size_t>(i++)] / 255.f;
  return img;
}

void export_first_layer(ModelGraph& model, const std::string& path) {
  save_ppm(first_layer_tiles(model), path);
}

}  // namespace lgnn
