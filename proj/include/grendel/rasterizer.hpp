#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "grendel/image.hpp"
#include "grendel/projection.hpp"

namespace grendel {

inline constexpr int kBlockSize = 16;

struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
  int pixels() const { return (x1 - x0) * (y1 - y0); }
};

/// Grid of 16x16 blocks over an image; edge blocks may be partial.
struct TileGrid {
  int width = 0;
  int height = 0;
  int tiles_x = 0;
  int tiles_y = 0;

  static TileGrid for_image(int w, int h);
  int count() const { return tiles_x * tiles_y; }
  PixelRect block_rect(int tile) const;
  int block_of_pixel(int x, int y) const { return (y / kBlockSize) * tiles_x + x / kBlockSize; }
};

/// Inclusive range of tiles; empty when x0 > x1 or y0 > y1.
struct TileRange {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;
  bool empty() const { return x0 > x1 || y0 > y1; }
  bool contains(int tx, int ty) const { return tx >= x0 && tx <= x1 && ty >= y0 && ty <= y1; }
};

/// Tiles holding at least one integer pixel of the footprint square
/// [mean - radius, mean + radius]^2, clipped to the image.
TileRange footprint_tiles(const TileGrid& grid, double mx, double my, int radius);

/// Per-tile depth-sorted lists of indices into a ProjectedShard. Ties in depth
/// are broken by ascending global id. Tiles outside the mask have empty lists.
struct TileZBuffer {
  TileGrid grid;
  std::vector<std::vector<std::uint32_t>> lists;
};

TileZBuffer build_tile_lists(const ProjectedShard& projected, const TileGrid& grid,
                             std::span<const std::uint8_t> mask = {});

struct RenderSettings {
  double alpha_min = 1.0 / 255.0;
  double alpha_cap = 0.99;
  double transmittance_min = 1e-4;
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
};

/// Per-pixel state saved by the forward pass for the backward pass.
struct RenderAux {
  std::vector<double> final_transmittance;
  std::vector<std::uint32_t> contributors;  // composited terms
  std::vector<std::uint32_t> end;           // one past the last list position visited

  void resize(std::size_t pixels);
};

/// Measured cost of each block of one image: render + loss + backward.
/// Nanoseconds, or composited-term counts in deterministic-cost mode.
struct TimingRecord {
  int image_id = 0;
  std::vector<double> block_cost;
};

struct RenderResult {
  Image image;
  RenderAux aux;
  std::vector<std::uint64_t> block_terms;  // composited terms per block
  std::vector<double> block_nanos;         // forward wall time per block
};

/// Renders one tile into `image`/`aux` (sized for the full grid). Returns the
/// number of composited terms. When `decision_hash` is non-null, folds every
/// threshold decision into it.
std::uint64_t render_tile(const TileZBuffer& zbuf, const ProjectedShard& projected, int tile,
                          const RenderSettings& settings, Image& image, RenderAux& aux,
                          std::uint64_t* decision_hash = nullptr);

/// Renders every tile with mask != 0 (all tiles when mask is empty).
RenderResult render_forward(const TileZBuffer& zbuf, const ProjectedShard& projected,
                            std::span<const std::uint8_t> mask, const RenderSettings& settings,
                            std::uint64_t* decision_hash = nullptr);

/// Gradient contribution of one tile to one projected Gaussian.
struct TilePartial {
  std::uint32_t tile = 0;
  std::uint32_t index = 0;  // into the ProjectedShard
  std::array<double, kProjGradWidth> grad{};
};

/// Backward of one tile. Appends one partial per list entry visited by any
/// pixel of the tile, in list order.
void render_tile_backward(const TileZBuffer& zbuf, const ProjectedShard& projected, int tile,
                          const Image& grad_pixels, const RenderAux& aux,
                          const RenderSettings& settings, std::vector<TilePartial>& out);

/// Sums partials into a gradient buffer in the order given.
void accumulate_partials(std::span<const TilePartial> partials, ProjectedGrads& grads);

/// Full backward over masked tiles in ascending tile order.
ProjectedGrads render_backward(const Image& grad_pixels, const TileZBuffer& zbuf,
                               const ProjectedShard& projected, const RenderAux& aux,
                               std::span<const std::uint8_t> mask, const RenderSettings& settings);

}  // namespace grendel
