#include "grendel/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "grendel/error.hpp"
#include "grendel/log.hpp"

namespace grendel {

std::vector<double> SsimSettings::weights() const {
  std::vector<double> w(window);
  const int h = halo();
  double sum = 0.0;
  for (int k = 0; k < window; ++k) {
    const double d = k - h;
    w[k] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    sum += w[k];
  }
  for (double& v : w) v /= sum;
  return w;
}

SsimMaps::SsimMaps(int w, int h)
    : width(w), height(h), value(static_cast<std::size_t>(w) * h * 3, 0.0), d_mu(value), d_xx(value),
      d_xy(value) {}

bool ssim_applicable(int width, int height, const SsimSettings& settings) {
  return width >= settings.window && height >= settings.window;
}

namespace {

void check_dims(const Image& a, const Image& b, const char* what) {
  if (a.width != b.width || a.height != b.height) {
    throw Error(std::string(what) + ": image dimensions differ");
  }
}

void check_mask(std::span<const std::uint8_t> mask, const TileGrid& grid, const char* what) {
  if (!mask.empty() && mask.size() != static_cast<std::size_t>(grid.count())) {
    throw Error(std::string(what) + ": mask does not match the block grid");
  }
}

// Separable zero-padded filtering of N per-pixel quantities (3 channels
// each) evaluated at the pixels of one block. `sample(x, y, c, out)` writes
// the N quantities of in-image pixel (x, y), channel c. Results land in
// out[n][((y - y0) * bw + (x - x0)) * 3 + c].
template <int N, typename Sample>
void filter_block(const PixelRect& r, int width, int height, std::span<const double> weights,
                  Sample sample, std::array<std::vector<double>, N>& out) {
  const int halo = static_cast<int>(weights.size()) / 2;
  const int bw = r.x1 - r.x0;
  const int bh = r.y1 - r.y0;
  const int ry0 = std::max(0, r.y0 - halo);
  const int ry1 = std::min(height, r.y1 + halo);
  const int rows = ry1 - ry0;

  std::array<std::vector<double>, N> horiz;
  for (auto& h : horiz) h.assign(static_cast<std::size_t>(rows) * bw * 3, 0.0);
  double vals[N];
  for (int y = ry0; y < ry1; ++y) {
    for (int x = r.x0; x < r.x1; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc[N] = {};
        for (int k = 0; k < static_cast<int>(weights.size()); ++k) {
          const int sx = x + k - halo;
          if (sx < 0 || sx >= width) continue;
          sample(sx, y, c, vals);
          for (int n = 0; n < N; ++n) acc[n] += weights[k] * vals[n];
        }
        const std::size_t idx = (static_cast<std::size_t>(y - ry0) * bw + (x - r.x0)) * 3 + c;
        for (int n = 0; n < N; ++n) horiz[n][idx] = acc[n];
      }
    }
  }
  for (auto& o : out) o.assign(static_cast<std::size_t>(bh) * bw * 3, 0.0);
  for (int y = r.y0; y < r.y1; ++y) {
    for (int x = r.x0; x < r.x1; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc[N] = {};
        for (int k = 0; k < static_cast<int>(weights.size()); ++k) {
          const int sy = y + k - halo;
          if (sy < ry0 || sy >= ry1) continue;
          const std::size_t idx = (static_cast<std::size_t>(sy - ry0) * bw + (x - r.x0)) * 3 + c;
          for (int n = 0; n < N; ++n) acc[n] += weights[k] * horiz[n][idx];
        }
        const std::size_t o = (static_cast<std::size_t>(y - r.y0) * bw + (x - r.x0)) * 3 + c;
        for (int n = 0; n < N; ++n) out[n][o] = acc[n];
      }
    }
  }
}

}  // namespace

double l1_block(const Image& rendered, const Image& target, const TileGrid& grid, int tile,
                double scale, Image& grad) {
  const PixelRect r = grid.block_rect(tile);
  double sum = 0.0;
  for (int y = r.y0; y < r.y1; ++y) {
    for (int x = r.x0; x < r.x1; ++x) {
      for (int c = 0; c < 3; ++c) {
        const std::size_t i = rendered.index(x, y, c);
        const double d = rendered.data[i] - target.data[i];
        sum += std::abs(d);
        grad.data[i] += (d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0));
      }
    }
  }
  return sum;
}

double ssim_forward_block(const Image& rendered, const Image& target, const TileGrid& grid, int tile,
                          const SsimSettings& settings, std::span<const double> weights, SsimMaps& maps) {
  const PixelRect r = grid.block_rect(tile);
  std::array<std::vector<double>, 5> stats;
  filter_block<5>(
      r, rendered.width, rendered.height, weights,
      [&](int x, int y, int c, double* v) {
        const std::size_t i = rendered.index(x, y, c);
        const double a = rendered.data[i], b = target.data[i];
        v[0] = a;
        v[1] = b;
        v[2] = a * a;
        v[3] = b * b;
        v[4] = a * b;
      },
      stats);
  const int bw = r.x1 - r.x0;
  const double c1 = settings.c1, c2 = settings.c2;
  double sum = 0.0;
  for (int y = r.y0; y < r.y1; ++y) {
    for (int x = r.x0; x < r.x1; ++x) {
      for (int c = 0; c < 3; ++c) {
        const std::size_t o = (static_cast<std::size_t>(y - r.y0) * bw + (x - r.x0)) * 3 + c;
        const double mx = stats[0][o], my = stats[1][o];
        const double var_x = stats[2][o] - mx * mx;
        const double var_y = stats[3][o] - my * my;
        const double cov = stats[4][o] - mx * my;
        const double a1 = 2.0 * mx * my + c1;
        const double a2 = 2.0 * cov + c2;
        const double b1 = mx * mx + my * my + c1;
        const double b2 = var_x + var_y + c2;
        const double denom = b1 * b2;
        const double s = a1 * a2 / denom;
        const std::size_t i = rendered.index(x, y, c);
        maps.value[i] = s;
        maps.d_mu[i] = (2.0 * my * a2 - 2.0 * my * a1) / denom - s * (2.0 * mx / b1 - 2.0 * mx / b2);
        maps.d_xx[i] = -s / b2;
        maps.d_xy[i] = 2.0 * a1 / denom;
        sum += s;
      }
    }
  }
  return sum;
}

void ssim_backward_block(const SsimMaps& maps, const Image& rendered, const Image& target,
                         const TileGrid& grid, int tile, const SsimSettings& /*settings*/,
                         std::span<const double> weights, double scale, Image& grad) {
  const PixelRect r = grid.block_rect(tile);
  std::array<std::vector<double>, 3> filtered;
  filter_block<3>(
      r, maps.width, maps.height, weights,
      [&](int x, int y, int c, double* v) {
        const std::size_t i = (static_cast<std::size_t>(y) * maps.width + x) * 3 + c;
        v[0] = maps.d_mu[i];
        v[1] = maps.d_xx[i];
        v[2] = maps.d_xy[i];
      },
      filtered);
  const int bw = r.x1 - r.x0;
  for (int y = r.y0; y < r.y1; ++y) {
    for (int x = r.x0; x < r.x1; ++x) {
      for (int c = 0; c < 3; ++c) {
        const std::size_t o = (static_cast<std::size_t>(y - r.y0) * bw + (x - r.x0)) * 3 + c;
        const std::size_t i = rendered.index(x, y, c);
        const double g = filtered[0][o] + 2.0 * rendered.data[i] * filtered[1][o] +
                         target.data[i] * filtered[2][o];
        grad.data[i] += scale * g;
      }
    }
  }
}

ScalarGrad l1_loss(const Image& rendered, const Image& target, std::span<const std::uint8_t> mask) {
  check_dims(rendered, target, "l1_loss");
  const TileGrid grid = TileGrid::for_image(rendered.width, rendered.height);
  check_mask(mask, grid, "l1_loss");
  std::size_t count = 0;
  for (int t = 0; t < grid.count(); ++t) {
    if (mask.empty() || mask[t]) count += static_cast<std::size_t>(grid.block_rect(t).pixels()) * 3;
  }
  ScalarGrad out{0.0, Image(rendered.width, rendered.height)};
  if (count == 0) return out;
  const double scale = 1.0 / static_cast<double>(count);
  double sum = 0.0;
  for (int t = 0; t < grid.count(); ++t) {
    if (mask.empty() || mask[t]) sum += l1_block(rendered, target, grid, t, scale, out.grad);
  }
  out.value = sum * scale;
  return out;
}

ScalarGrad ssim(const Image& rendered, const Image& target, std::span<const std::uint8_t> mask,
                const SsimSettings& settings) {
  check_dims(rendered, target, "ssim");
  const TileGrid grid = TileGrid::for_image(rendered.width, rendered.height);
  check_mask(mask, grid, "ssim");
  const auto weights = settings.weights();
  SsimMaps maps(rendered.width, rendered.height);
  std::size_t count = 0;
  double sum = 0.0;
  for (int t = 0; t < grid.count(); ++t) {
    if (!mask.empty() && !mask[t]) continue;
    sum += ssim_forward_block(rendered, target, grid, t, settings, weights, maps);
    count += static_cast<std::size_t>(grid.block_rect(t).pixels()) * 3;
  }
  ScalarGrad out{1.0, Image(rendered.width, rendered.height)};
  if (count == 0) return out;
  const double scale = 1.0 / static_cast<double>(count);
  out.value = sum * scale;
  for (int t = 0; t < grid.count(); ++t) {
    ssim_backward_block(maps, rendered, target, grid, t, settings, weights, scale, out.grad);
  }
  return out;
}

LossReport compute_loss(const Image& rendered, const Image& target, const LossSettings& settings) {
  check_dims(rendered, target, "compute_loss");
  const TileGrid grid = TileGrid::for_image(rendered.width, rendered.height);
  LossReport report;
  report.grad = Image(rendered.width, rendered.height);
  report.ssim_enabled = ssim_applicable(rendered.width, rendered.height, settings.ssim);
  if (!report.ssim_enabled) log_warning("image smaller than the SSIM window; training on L1 only");
  const double lam = report.ssim_enabled ? settings.lambda_ssim : 0.0;
  const double inv_count = 1.0 / static_cast<double>(rendered.data.size());

  double l1_sum = 0.0;
  for (int t = 0; t < grid.count(); ++t) {
    l1_sum += l1_block(rendered, target, grid, t, (1.0 - lam) * inv_count, report.grad);
  }
  report.l1 = l1_sum * inv_count;
  if (!report.ssim_enabled) {
    report.combined = report.l1;
    return report;
  }
  const auto weights = settings.ssim.weights();
  SsimMaps maps(rendered.width, rendered.height);
  double ssim_sum = 0.0;
  for (int t = 0; t < grid.count(); ++t) {
    ssim_sum += ssim_forward_block(rendered, target, grid, t, settings.ssim, weights, maps);
  }
  for (int t = 0; t < grid.count(); ++t) {
    ssim_backward_block(maps, rendered, target, grid, t, settings.ssim, weights, -lam * inv_count,
                        report.grad);
  }
  report.ssim = ssim_sum * inv_count;
  report.combined = (1.0 - lam) * report.l1 + lam * (1.0 - report.ssim);
  return report;
}

double psnr(const Image& rendered, const Image& target) {
  check_dims(rendered, target, "psnr");
  double sum = 0.0;
  for (std::size_t i = 0; i < rendered.data.size(); ++i) {
    const double d = rendered.data[i] - target.data[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(rendered.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

}  // namespace grendel
