#include "grendel/pipeline.hpp"

#include <cmath>

#include "grendel/error.hpp"

namespace grendel {

namespace {

inline void fold(std::uint64_t* h, std::uint64_t v) {
  if (!h) return;
  *h ^= v + 0x9e3779b97f4a7c15ULL + (*h << 6) + (*h >> 2);
}

}  // namespace

ViewPass forward_backward(const GaussianCloud& cloud, std::span<const std::uint64_t> ids, const CameraView& view,
                          const Image& target, const PipelineSettings& settings, std::uint64_t* decision_hash) {
  if (target.width != view.width || target.height != view.height) {
    throw Error("target image size does not match camera " + std::to_string(view.id));
  }
  ViewPass pass;
  pass.projected = transform_gaussians(cloud, ids, view, settings.projection);
  for (std::size_t i = 0; i < pass.projected.size(); ++i) {
    fold(decision_hash, pass.projected.visible[i]);
    for (int c = 0; c < 3; ++c) fold(decision_hash, pass.projected.clamped[3 * i + c]);
  }
  const TileGrid grid = TileGrid::for_image(view.width, view.height);
  const TileZBuffer zbuf = build_tile_lists(pass.projected, grid);
  pass.render = render_forward(zbuf, pass.projected, {}, settings.render, decision_hash);
  if (decision_hash) {
    for (std::size_t k = 0; k < target.data.size(); ++k) {
      const double d = pass.render.image.data[k] - target.data[k];
      fold(decision_hash, d > 0.0 ? 1 : (d < 0.0 ? 2 : 3));
    }
  }
  pass.loss = compute_loss(pass.render.image, target, settings.loss);
  pass.projected_grad =
      render_backward(pass.loss.grad, zbuf, pass.projected, pass.render.aux, {}, settings.render);
  pass.grad = transform_backward(pass.projected_grad, cloud, view, pass.projected, settings.projection);
  return pass;
}

Image render_view(const GaussianCloud& cloud, const CameraView& view, const PipelineSettings& settings) {
  const ProjectedShard p = transform_gaussians(cloud, {}, view, settings.projection);
  const TileGrid grid = TileGrid::for_image(view.width, view.height);
  return render_forward(build_tile_lists(p, grid), p, {}, settings.render).image;
}

void accumulate_view_stats(DensifyStats& stats, const ProjectedGrads& grads, const ProjectedShard& projected,
                           int width, int height) {
  const std::size_t n = projected.size();
  std::vector<double> g(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = grads.row(i);
    g[2 * i] = row[pg::kMeanX] * 0.5 * width;
    g[2 * i + 1] = row[pg::kMeanY] * 0.5 * height;
  }
  accumulate(stats, g, projected.radius, projected.visible);
}

bool crosses_multiple(std::int64_t before, std::int64_t after, std::int64_t interval) {
  if (interval <= 0 || after <= before) return false;
  return after / interval > before / interval && after >= interval;
}

bool densify_due(const DensifyConfig& c, std::int64_t before, std::int64_t after) {
  return after > c.start_images && after <= c.stop_images && crosses_multiple(before, after, c.interval_images);
}

bool opacity_reset_due(const DensifyConfig& c, std::int64_t before, std::int64_t after) {
  return after <= c.stop_images && crosses_multiple(before, after, c.opacity_reset_images);
}

double reference_step(Shard& shard, std::span<const CameraView> views, std::span<const Image> targets,
                      const HyperParams& hyper, std::int64_t images_seen, const PipelineSettings& settings,
                      bool float32) {
  if (views.size() != targets.size() || views.empty()) throw Error("reference_step: need one target per view");
  shard.check_aligned();
  GaussianCloud grad(shard.size());
  double loss = 0.0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    ViewPass pass = forward_backward(shard.cloud, shard.ids, views[v], targets[v], settings);
    for (int g = 0; g < kNumGroups; ++g) {
      for (std::size_t k = 0; k < grad.groups[g].size(); ++k) grad.groups[g][k] += pass.grad.groups[g][k];
    }
    accumulate_view_stats(shard.stats, pass.projected_grad, pass.projected, views[v].width, views[v].height);
    loss += pass.loss.combined;
  }
  const double inv_b = 1.0 / static_cast<double>(views.size());
  for (auto& group : grad.groups) {
    for (double& x : group) x *= inv_b;
  }
  HyperParams h = hyper;
  h.batch_size = static_cast<int>(views.size());
  adam_step(shard.cloud, grad, shard.adam, scale_hyperparams(h, images_seen));
  if (float32) round_to_float32(shard.cloud);
  return loss * inv_b;
}

std::vector<EvalRow> evaluate(const GaussianCloud& cloud, std::span<const CameraView> cameras,
                              std::span<const Image> targets, const PipelineSettings& settings) {
  if (cameras.size() != targets.size()) throw Error("evaluate: need one target per camera");
  std::vector<EvalRow> rows;
  for (std::size_t v = 0; v < cameras.size(); ++v) {
    const Image img = render_view(cloud, cameras[v], settings);
    EvalRow r;
    r.camera_id = cameras[v].id;
    r.psnr = psnr(img, targets[v]);
    r.ssim = ssim_applicable(img.width, img.height, settings.loss.ssim)
                 ? ssim(img, targets[v], {}, settings.loss.ssim).value
                 : std::nan("");
    rows.push_back(r);
  }
  return rows;
}

double mean_psnr(const std::vector<EvalRow>& rows) {
  if (rows.empty()) return std::nan("");
  double s = 0.0;
  for (const auto& r : rows) s += r.psnr;
  return s / static_cast<double>(rows.size());
}

}  // namespace grendel
