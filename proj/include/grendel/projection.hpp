#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "grendel/camera.hpp"
#include "grendel/gaussian_cloud.hpp"

namespace grendel {

struct ProjectionSettings {
  double near_clip = 0.01;
  double dilation = 0.3;  // added to the 2D covariance diagonal, in pixels^2
  double radius_sigmas = 3.0;
  int sh_degree = 3;
};

/// Per-view screen-space attributes of one shard of Gaussians.
/// The conic (A, B, C) is the inverse 2D covariance [[A, B], [B, C]].
struct ProjectedShard {
  std::vector<double> mean2d;         // 2 per Gaussian, pixels
  std::vector<double> depth;          // camera-space z
  std::vector<int> radius;            // pixels; 0 when invisible
  std::vector<double> conic;          // 3 per Gaussian
  std::vector<double> rgb;            // 3 per Gaussian, clamped >= 0
  std::vector<double> opacity;
  std::vector<std::uint8_t> visible;
  std::vector<std::uint8_t> clamped;  // 3 per Gaussian; color channel hit the >= 0 clamp
  std::vector<std::uint64_t> ids;     // global Gaussian ids (depth tie-break)

  std::size_t size() const { return depth.size(); }
  void resize(std::size_t n);
  /// Appends entry i of src.
  void append_from(const ProjectedShard& src, std::size_t i);
};

/// Gradient w.r.t. one projected Gaussian: mean2d (2), conic (3), rgb (3), opacity (1).
inline constexpr int kProjGradWidth = 9;
namespace pg {
inline constexpr int kMeanX = 0, kMeanY = 1, kConicA = 2, kConicB = 3, kConicC = 4, kRgb = 5,
                     kOpacity = 8;
}

/// Flat N x kProjGradWidth gradient buffer aligned with a ProjectedShard.
struct ProjectedGrads {
  std::vector<double> values;

  ProjectedGrads() = default;
  explicit ProjectedGrads(std::size_t n) : values(n * kProjGradWidth, 0.0) {}
  std::size_t size() const { return values.size() / kProjGradWidth; }
  std::span<double, kProjGradWidth> row(std::size_t i) {
    return std::span<double, kProjGradWidth>(values.data() + i * kProjGradWidth, kProjGradWidth);
  }
  std::span<const double, kProjGradWidth> row(std::size_t i) const {
    return std::span<const double, kProjGradWidth>(values.data() + i * kProjGradWidth,
                                                   kProjGradWidth);
  }
};

/// Projects every Gaussian of `cloud` into `view`. `ids` supplies global ids
/// (may be empty, then 0..n-1). Throws Error naming the first Gaussian with a
/// non-finite parameter.
ProjectedShard transform_gaussians(const GaussianCloud& cloud, std::span<const std::uint64_t> ids,
                                   const CameraView& view, const ProjectionSettings& settings = {});

/// Chain rule from projected-attribute gradients back to the parameters.
/// Invisible Gaussians receive zero gradient.
GaussianCloud transform_backward(const ProjectedGrads& grad, const GaussianCloud& cloud,
                                 const CameraView& view, const ProjectedShard& forward,
                                 const ProjectionSettings& settings = {});

/// As transform_backward, adding into `out` (which must match cloud.count()).
void transform_backward_accumulate(const ProjectedGrads& grad, const GaussianCloud& cloud,
                                   const CameraView& view, const ProjectedShard& forward,
                                   const ProjectionSettings& settings, GaussianCloud& out);

}  // namespace grendel
