#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "grendel/camera.hpp"
#include "grendel/densification.hpp"
#include "grendel/gaussian_cloud.hpp"
#include "grendel/image.hpp"
#include "grendel/loss.hpp"
#include "grendel/optimizer.hpp"
#include "grendel/projection.hpp"
#include "grendel/rasterizer.hpp"
#include "grendel/shard.hpp"

namespace grendel {

struct PipelineSettings {
  ProjectionSettings projection;
  RenderSettings render;
  LossSettings loss;
};

/// Everything one view produces on a single process.
struct ViewPass {
  ProjectedShard projected;
  RenderResult render;
  LossReport loss;
  ProjectedGrads projected_grad;
  GaussianCloud grad;  // d loss / d parameters for this view alone
};

/// Projection, rasterization, loss and the full backward pass for one view.
/// With `decision_hash`, every discrete choice (visibility, tile membership,
/// depth order, alpha and transmittance cutoffs, color clamps, L1 signs) is
/// folded into the hash, so callers can detect when a perturbation crossed one.
ViewPass forward_backward(const GaussianCloud& cloud, std::span<const std::uint64_t> ids, const CameraView& view,
                          const Image& target, const PipelineSettings& settings = {},
                          std::uint64_t* decision_hash = nullptr);

Image render_view(const GaussianCloud& cloud, const CameraView& view, const PipelineSettings& settings = {});

/// Densification statistics use the mean2d gradient in normalized device
/// coordinates, (gx * W/2, gy * H/2).
void accumulate_view_stats(DensifyStats& stats, const ProjectedGrads& grads, const ProjectedShard& projected,
                           int width, int height);

/// True when a positive multiple of `interval` lies in (before, after].
bool crosses_multiple(std::int64_t before, std::int64_t after, std::int64_t interval);
bool densify_due(const DensifyConfig& c, std::int64_t before, std::int64_t after);
bool opacity_reset_due(const DensifyConfig& c, std::int64_t before, std::int64_t after);

/// Single-process training step on the whole shard: per-view gradients are
/// summed in batch order, divided by the batch size and applied with Adam.
/// Returns the mean per-view loss. This is the reference the distributed
/// engine must reproduce.
double reference_step(Shard& shard, std::span<const CameraView> views, std::span<const Image> targets,
                      const HyperParams& hyper, std::int64_t images_seen, const PipelineSettings& settings = {},
                      bool float32 = false);

/// Mean PSNR and SSIM of the cloud over the given cameras.
struct EvalRow {
  int camera_id = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};
std::vector<EvalRow> evaluate(const GaussianCloud& cloud, std::span<const CameraView> cameras,
                              std::span<const Image> targets, const PipelineSettings& settings = {});
double mean_psnr(const std::vector<EvalRow>& rows);

}  // namespace grendel
