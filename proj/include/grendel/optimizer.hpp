#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

#include "grendel/gaussian_cloud.hpp"

namespace grendel {

enum class LrRule { Constant, Sqrt, Linear };
enum class MomentumRule { Unscaled, Exponential };

std::string_view to_string(LrRule r);
std::string_view to_string(MomentumRule r);
LrRule parse_lr_rule(std::string_view s);
MomentumRule parse_momentum_rule(std::string_view s);

/// Batch-size-1 Adam settings plus the batch size and scaling rules.
struct HyperParams {
  // Indexed by Group. The position entry is multiplied by `spatial_scale`.
  std::array<double, kNumGroups> base_lr{1.6e-4, 5e-3, 1e-3, 5e-2, 2.5e-3, 1.25e-4};
  double position_lr_final = 1.6e-6;
  std::int64_t position_lr_max_images = 30000;
  double spatial_scale = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;
  int batch_size = 1;
  LrRule lr_rule = LrRule::Sqrt;
  MomentumRule momentum_rule = MomentumRule::Exponential;
  // Clear moments and step counters when the batch size changes between steps.
  bool reset_on_batch_change = false;

  void validate() const;
};

struct ScaledHyperParams {
  std::array<double, kNumGroups> lr{};
  double beta1 = 0.0;
  double beta2 = 0.0;
  double eps = 0.0;
};

/// Unscaled per-group learning rate after `images_seen` training images
/// (log-linear decay for positions).
double group_lr(const HyperParams& h, Group g, std::int64_t images_seen);

/// Learning-rate multiplier for the batch size under the selected rule.
double lr_multiplier(LrRule rule, int batch_size);

/// lr' = lr * sqrt(b) (or the selected alternative); beta' = beta^b when
/// momentum scaling is on. eps is never scaled.
ScaledHyperParams scale_hyperparams(const HyperParams& h, std::int64_t images_seen = 0);

struct AdamOptions {
  bool bias_correction = true;
  // Keep exp_avg_sq as given instead of updating it.
  bool freeze_second_moment = false;
};

/// One Adam update of a flat parameter array; `step` is the 1-based step
/// number after increment.
void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> exp_avg,
                 std::span<double> exp_avg_sq, std::int64_t step, double lr, double beta1,
                 double beta2, double eps, const AdamOptions& options = {});

/// Steps every group of `cloud` with `grads` (mean over the batch), then
/// renormalizes quaternions. Throws on shape mismatch.
void adam_step(GaussianCloud& cloud, const GaussianCloud& grads, AdamState& state,
               const ScaledHyperParams& hypers, const AdamOptions& options = {});

/// Rounds every parameter to the nearest 32-bit float.
void round_to_float32(GaussianCloud& cloud);

}  // namespace grendel
