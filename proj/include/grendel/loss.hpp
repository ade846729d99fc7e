#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "grendel/image.hpp"
#include "grendel/rasterizer.hpp"

namespace grendel {

struct SsimSettings {
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;

  int halo() const { return window / 2; }
  std::vector<double> weights() const;
};

struct LossSettings {
  double lambda_ssim = 0.2;
  SsimSettings ssim;
};

struct LossReport {
  double l1 = 0.0;
  double ssim = 1.0;
  double combined = 0.0;
  bool ssim_enabled = true;
  Image grad;  // d combined / d rendered
};

struct ScalarGrad {
  double value = 0.0;
  Image grad;
};

bool ssim_applicable(int width, int height, const SsimSettings& settings);

/// Mean absolute difference over masked blocks (all when mask is empty),
/// with its gradient.
ScalarGrad l1_loss(const Image& rendered, const Image& target, std::span<const std::uint8_t> mask = {});

/// Mean SSIM over the centers of masked blocks with zero-padded Gaussian
/// windows, and its gradient w.r.t. `rendered`.
ScalarGrad ssim(const Image& rendered, const Image& target, std::span<const std::uint8_t> mask = {},
                const SsimSettings& settings = {});

/// Whole-image training loss (1 - lambda) * L1 + lambda * (1 - SSIM). Falls
/// back to L1 with a warning when the image is smaller than the window.
LossReport compute_loss(const Image& rendered, const Image& target, const LossSettings& settings = {});

/// -10 log10(MSE); +infinity when the images are identical.
double psnr(const Image& rendered, const Image& target);

// --- Block-level building blocks shared by the whole-image path and the
// distributed engine. Each reads only data within `halo()` pixels of the
// block, so callers holding a halo reproduce whole-image results exactly.

/// Per-center SSIM and its partials w.r.t. the windowed statistics
/// (mu_x, E[x^2], E[xy]), 3 channels per pixel.
struct SsimMaps {
  int width = 0;
  int height = 0;
  std::vector<double> value, d_mu, d_xx, d_xy;

  SsimMaps() = default;
  SsimMaps(int w, int h);
};

/// Sum of |x - y| over the block; adds sign(x - y) * scale into grad.
double l1_block(const Image& rendered, const Image& target, const TileGrid& grid, int tile,
                double scale, Image& grad);

/// Fills `maps` for the block's centers; returns the block's SSIM sum over
/// centers and channels.
double ssim_forward_block(const Image& rendered, const Image& target, const TileGrid& grid, int tile,
                          const SsimSettings& settings, std::span<const double> weights, SsimMaps& maps);

/// Adds scale * d(sum of SSIM over all centers)/d rendered at the block's
/// pixels into grad. Needs `maps` valid within the halo of the block.
void ssim_backward_block(const SsimMaps& maps, const Image& rendered, const Image& target,
                         const TileGrid& grid, int tile, const SsimSettings& settings,
                         std::span<const double> weights, double scale, Image& grad);

}  // namespace grendel
