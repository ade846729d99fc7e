#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace grendel {

/// RGB image, row-major, channels interleaved, values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * 3 + c;
  }
  double& at(int x, int y, int c) { return data[index(x, y, c)]; }
  double at(int x, int y, int c) const { return data[index(x, y, c)]; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  bool operator==(const Image&) const = default;
};

/// Binary PPM (P6, maxval 255). Loaded values are normalized to [0, 1].
Image read_ppm(const std::filesystem::path& path);
/// Writes P6 with values clamped to [0, 1] and rounded to 8 bits.
void write_ppm(const std::filesystem::path& path, const Image& image);
/// Rounds to the 8-bit grid the PPM codec stores.
Image quantize_8bit(const Image& image);

}  // namespace grendel
