#include "ncgm/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "ncgm/errors.hpp"

namespace ncgm {

std::optional<double> sample_bilinear(const GrayImage& img, double x, double y) {
  const double maxx = static_cast<double>(img.width) - 1.0;
  const double maxy = static_cast<double>(img.height) - 1.0;
  constexpr double tol = 1e-9;
  if (!(x >= -tol && y >= -tol && x <= maxx + tol && y <= maxy + tol)) return std::nullopt;
  x = std::clamp(x, 0.0, maxx);
  y = std::clamp(y, 0.0, maxy);
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x1 = std::min(x0 + 1, img.width - 1);
  const auto y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  if (fx == 0.0 && fy == 0.0) return static_cast<double>(img.at(x0, y0));
  const double top = (1.0 - fx) * img.at(x0, y0) + fx * img.at(x1, y0);
  const double bottom = (1.0 - fx) * img.at(x0, y1) + fx * img.at(x1, y1);
  return (1.0 - fy) * top + fy * bottom;
}

GrayImage resize_bilinear(const GrayImage& img, std::size_t width, std::size_t height) {
  if (img.empty() || width == 0 || height == 0) throw ContractError("resize_bilinear: empty image");
  if (img.width == width && img.height == height) return img;
  GrayImage out(width, height);
  const double sx = static_cast<double>(img.width) / static_cast<double>(width);
  const double sy = static_cast<double>(img.height) / static_cast<double>(height);
  for (std::size_t y = 0; y < height; ++y) {
    const double src_y = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    for (std::size_t x = 0; x < width; ++x) {
      const double src_x = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const double v = *sample_bilinear(img, src_x, src_y);
      out.at(x, y) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  }
  return out;
}

void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255 || w == 0 || h == 0) throw DataError("unsupported PGM: " + path.string());
  is.get();
  GrayImage img(w, h);
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()))) {
    throw DataError("truncated PGM: " + path.string());
  }
  return img;
}

}  // namespace ncgm
