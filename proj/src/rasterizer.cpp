#include "grendel/rasterizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "grendel/error.hpp"

namespace grendel {

TileGrid TileGrid::for_image(int w, int h) {
  if (w <= 0 || h <= 0) throw Error("tile grid: image dimensions must be positive");
  return {w, h, (w + kBlockSize - 1) / kBlockSize, (h + kBlockSize - 1) / kBlockSize};
}

PixelRect TileGrid::block_rect(int tile) const {
  const int tx = tile % tiles_x;
  const int ty = tile / tiles_x;
  return {tx * kBlockSize, ty * kBlockSize, std::min(width, (tx + 1) * kBlockSize),
          std::min(height, (ty + 1) * kBlockSize)};
}

TileRange footprint_tiles(const TileGrid& grid, double mx, double my, int radius) {
  const int px0 = std::max(0, static_cast<int>(std::ceil(mx - radius)));
  const int py0 = std::max(0, static_cast<int>(std::ceil(my - radius)));
  const int px1 = std::min(grid.width - 1, static_cast<int>(std::floor(mx + radius)));
  const int py1 = std::min(grid.height - 1, static_cast<int>(std::floor(my + radius)));
  if (px0 > px1 || py0 > py1) return {};
  return {px0 / kBlockSize, py0 / kBlockSize, px1 / kBlockSize, py1 / kBlockSize};
}

TileZBuffer build_tile_lists(const ProjectedShard& projected, const TileGrid& grid,
                             std::span<const std::uint8_t> mask) {
  if (!mask.empty() && mask.size() != static_cast<std::size_t>(grid.count())) {
    throw Error("build_tile_lists: mask does not match the block grid");
  }
  TileZBuffer zbuf{grid, std::vector<std::vector<std::uint32_t>>(grid.count())};
  for (std::size_t i = 0; i < projected.size(); ++i) {
    if (!projected.visible[i]) continue;
    const TileRange r =
        footprint_tiles(grid, projected.mean2d[2 * i], projected.mean2d[2 * i + 1], projected.radius[i]);
    for (int ty = r.y0; ty <= r.y1; ++ty) {
      for (int tx = r.x0; tx <= r.x1; ++tx) {
        const int t = ty * grid.tiles_x + tx;
        if (mask.empty() || mask[t]) zbuf.lists[t].push_back(static_cast<std::uint32_t>(i));
      }
    }
  }
  for (auto& list : zbuf.lists) {
    std::sort(list.begin(), list.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (projected.depth[a] != projected.depth[b]) return projected.depth[a] < projected.depth[b];
      return projected.ids[a] < projected.ids[b];
    });
  }
  return zbuf;
}

void RenderAux::resize(std::size_t pixels) {
  final_transmittance.assign(pixels, 1.0);
  contributors.assign(pixels, 0);
  end.assign(pixels, 0);
}

namespace {

enum class Decision : std::uint8_t { Composite = 1, SkipPower, SkipAlpha, Capped, Stop };

inline void fold(std::uint64_t* h, std::uint64_t v) {
  if (!h) return;
  *h ^= v + 0x9e3779b97f4a7c15ULL + (*h << 6) + (*h >> 2);
}

struct AlphaEval {
  double alpha = 0.0;
  double gauss = 0.0;
  double dx = 0.0, dy = 0.0;
  bool skip_power = false;
  bool capped = false;
};

inline AlphaEval eval_alpha(const ProjectedShard& p, std::uint32_t i, int px, int py,
                            double alpha_cap) {
  AlphaEval e;
  e.dx = p.mean2d[2 * i] - px;
  e.dy = p.mean2d[2 * i + 1] - py;
  const double a = p.conic[3 * i], b = p.conic[3 * i + 1], c = p.conic[3 * i + 2];
  const double power = -0.5 * (a * e.dx * e.dx + c * e.dy * e.dy) - b * e.dx * e.dy;
  if (power > 0.0) {
    e.skip_power = true;
    return e;
  }
  e.gauss = std::exp(power);
  const double raw = p.opacity[i] * e.gauss;
  e.capped = raw > alpha_cap;
  e.alpha = e.capped ? alpha_cap : raw;
  return e;
}

}  // namespace

std::uint64_t render_tile(const TileZBuffer& zbuf, const ProjectedShard& projected, int tile,
                          const RenderSettings& settings, Image& image, RenderAux& aux,
                          std::uint64_t* decision_hash) {
  const auto& list = zbuf.lists[tile];
  const PixelRect rect = zbuf.grid.block_rect(tile);
  std::uint64_t terms = 0;
  fold(decision_hash, 0xB10C0000ULL + static_cast<std::uint64_t>(tile));
  for (auto i : list) fold(decision_hash, projected.ids[i]);

  for (int y = rect.y0; y < rect.y1; ++y) {
    for (int x = rect.x0; x < rect.x1; ++x) {
      double t = 1.0;
      Eigen::Vector3d color = Eigen::Vector3d::Zero();
      std::uint32_t count = 0;
      std::uint32_t pos = 0;
      for (; pos < list.size(); ++pos) {
        const std::uint32_t i = list[pos];
        const AlphaEval e = eval_alpha(projected, i, x, y, settings.alpha_cap);
        if (e.skip_power) {
          fold(decision_hash, static_cast<std::uint64_t>(Decision::SkipPower));
          continue;
        }
        if (e.alpha < settings.alpha_min) {
          fold(decision_hash, static_cast<std::uint64_t>(Decision::SkipAlpha));
          continue;
        }
        fold(decision_hash,
             static_cast<std::uint64_t>(e.capped ? Decision::Capped : Decision::Composite));
        const double w = t * e.alpha;
        for (int c = 0; c < 3; ++c) color[c] += w * projected.rgb[3 * i + c];
        t *= 1.0 - e.alpha;
        ++count;
        if (t < settings.transmittance_min) {
          ++pos;
          fold(decision_hash, static_cast<std::uint64_t>(Decision::Stop));
          break;
        }
      }
      const std::size_t pix = static_cast<std::size_t>(y) * image.width + x;
      for (int c = 0; c < 3; ++c) image.data[pix * 3 + c] = color[c] + t * settings.background[c];
      aux.final_transmittance[pix] = t;
      aux.contributors[pix] = count;
      aux.end[pix] = pos;
      terms += count;
    }
  }
  return terms;
}

RenderResult render_forward(const TileZBuffer& zbuf, const ProjectedShard& projected,
                            std::span<const std::uint8_t> mask, const RenderSettings& settings,
                            std::uint64_t* decision_hash) {
  const TileGrid& grid = zbuf.grid;
  if (!mask.empty() && mask.size() != static_cast<std::size_t>(grid.count())) {
    throw Error("render_forward: mask does not match the block grid");
  }
  RenderResult out;
  out.image = Image(grid.width, grid.height);
  out.aux.resize(out.image.pixel_count());
  out.block_terms.assign(grid.count(), 0);
  out.block_nanos.assign(grid.count(), 0.0);
  for (int t = 0; t < grid.count(); ++t) {
    if (!mask.empty() && !mask[t]) continue;
    const auto start = std::chrono::steady_clock::now();
    out.block_terms[t] = render_tile(zbuf, projected, t, settings, out.image, out.aux, decision_hash);
    out.block_nanos[t] = std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - start).count();
  }
  return out;
}

void render_tile_backward(const TileZBuffer& zbuf, const ProjectedShard& projected, int tile,
                          const Image& grad_pixels, const RenderAux& aux,
                          const RenderSettings& settings, std::vector<TilePartial>& out) {
  const auto& list = zbuf.lists[tile];
  const PixelRect rect = zbuf.grid.block_rect(tile);
  std::uint32_t max_end = 0;
  for (int y = rect.y0; y < rect.y1; ++y) {
    for (int x = rect.x0; x < rect.x1; ++x) {
      max_end = std::max(max_end, aux.end[static_cast<std::size_t>(y) * grad_pixels.width + x]);
    }
  }
  if (max_end == 0) return;
  const std::size_t first = out.size();
  out.resize(first + max_end);
  for (std::uint32_t k = 0; k < max_end; ++k) {
    out[first + k].tile = static_cast<std::uint32_t>(tile);
    out[first + k].index = list[k];
  }

  for (int y = rect.y0; y < rect.y1; ++y) {
    for (int x = rect.x0; x < rect.x1; ++x) {
      const std::size_t pix = static_cast<std::size_t>(y) * grad_pixels.width + x;
      const Eigen::Vector3d g_pix(grad_pixels.data[pix * 3], grad_pixels.data[pix * 3 + 1],
                                  grad_pixels.data[pix * 3 + 2]);
      if (aux.end[pix] == 0 || g_pix.isZero(0.0)) continue;
      double t = aux.final_transmittance[pix];
      Eigen::Vector3d behind = settings.background;
      for (std::uint32_t pos = aux.end[pix]; pos-- > 0;) {
        const std::uint32_t i = list[pos];
        const AlphaEval e = eval_alpha(projected, i, x, y, settings.alpha_cap);
        if (e.skip_power || e.alpha < settings.alpha_min) continue;
        const double t_before = t / (1.0 - e.alpha);
        auto& g = out[first + pos].grad;
        double g_alpha = 0.0;
        for (int c = 0; c < 3; ++c) {
          const double col = projected.rgb[3 * i + c];
          g[pg::kRgb + c] += e.alpha * t_before * g_pix[c];
          g_alpha += (col - behind[c]) * g_pix[c];
          behind[c] = e.alpha * col + (1.0 - e.alpha) * behind[c];
        }
        g_alpha *= t_before;
        t = t_before;
        if (e.capped) continue;

        const double o = projected.opacity[i];
        g[pg::kOpacity] += g_alpha * e.gauss;
        const double g_power = g_alpha * o * e.gauss;
        const double a = projected.conic[3 * i], b = projected.conic[3 * i + 1],
                     c = projected.conic[3 * i + 2];
        g[pg::kMeanX] += g_power * -(a * e.dx + b * e.dy);
        g[pg::kMeanY] += g_power * -(b * e.dx + c * e.dy);
        g[pg::kConicA] += g_power * -0.5 * e.dx * e.dx;
        g[pg::kConicB] += g_power * -e.dx * e.dy;
        g[pg::kConicC] += g_power * -0.5 * e.dy * e.dy;
      }
    }
  }
}

void accumulate_partials(std::span<const TilePartial> partials, ProjectedGrads& grads) {
  for (const auto& p : partials) {
    auto row = grads.row(p.index);
    for (int k = 0; k < kProjGradWidth; ++k) row[k] += p.grad[k];
  }
}

ProjectedGrads render_backward(const Image& grad_pixels, const TileZBuffer& zbuf,
                               const ProjectedShard& projected, const RenderAux& aux,
                               std::span<const std::uint8_t> mask, const RenderSettings& settings) {
  const TileGrid& grid = zbuf.grid;
  if (aux.end.size() != static_cast<std::size_t>(grid.width) * grid.height ||
      grad_pixels.width != grid.width || grad_pixels.height != grid.height) {
    throw Error("render_backward: aux/zbuf mismatch");
  }
  std::vector<TilePartial> partials;
  for (int t = 0; t < grid.count(); ++t) {
    if (!mask.empty() && !mask[t]) continue;
    render_tile_backward(zbuf, projected, t, grad_pixels, aux, settings, partials);
  }
  ProjectedGrads grads(projected.size());
  accumulate_partials(partials, grads);
  return grads;
}

}  // namespace grendel
