#include "grendel/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "grendel/error.hpp"

namespace grendel {

std::string_view to_string(LrRule r) {
  switch (r) {
    case LrRule::Constant: return "constant";
    case LrRule::Sqrt: return "sqrt";
    case LrRule::Linear: return "linear";
  }
  return "?";
}

std::string_view to_string(MomentumRule r) {
  return r == MomentumRule::Exponential ? "exponential" : "unscaled";
}

LrRule parse_lr_rule(std::string_view s) {
  if (s == "constant") return LrRule::Constant;
  if (s == "sqrt") return LrRule::Sqrt;
  if (s == "linear") return LrRule::Linear;
  throw Error("unknown learning-rate rule '" + std::string(s) + "' (constant|sqrt|linear)");
}

MomentumRule parse_momentum_rule(std::string_view s) {
  if (s == "exponential" || s == "scaled") return MomentumRule::Exponential;
  if (s == "unscaled") return MomentumRule::Unscaled;
  throw Error("unknown momentum rule '" + std::string(s) + "' (exponential|unscaled)");
}

void HyperParams::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw Error("Adam eps must be positive");
  if (batch_size < 1) throw Error("batch size must be >= 1");
}

double group_lr(const HyperParams& h, Group g, std::int64_t images_seen) {
  if (g != Group::Position) return h.base_lr[group_index(g)];
  const double init = h.base_lr[group_index(Group::Position)] * h.spatial_scale;
  const double final_lr = h.position_lr_final * h.spatial_scale;
  if (h.position_lr_max_images <= 0 || init <= 0.0 || final_lr <= 0.0) return init;
  const double r = std::clamp(static_cast<double>(images_seen) / static_cast<double>(h.position_lr_max_images), 0.0, 1.0);
  return std::exp((1.0 - r) * std::log(init) + r * std::log(final_lr));
}

double lr_multiplier(LrRule rule, int batch_size) {
  switch (rule) {
    case LrRule::Constant: return 1.0;
    case LrRule::Sqrt: return std::sqrt(static_cast<double>(batch_size));
    case LrRule::Linear: return static_cast<double>(batch_size);
  }
  return 1.0;
}

ScaledHyperParams scale_hyperparams(const HyperParams& h, std::int64_t images_seen) {
  h.validate();
  ScaledHyperParams s;
  const double mult = lr_multiplier(h.lr_rule, h.batch_size);
  for (int g = 0; g < kNumGroups; ++g) s.lr[g] = group_lr(h, static_cast<Group>(g), images_seen) * mult;
  if (h.momentum_rule == MomentumRule::Exponential) {
    s.beta1 = std::pow(h.beta1, h.batch_size);
    s.beta2 = std::pow(h.beta2, h.batch_size);
  } else {
    s.beta1 = h.beta1;
    s.beta2 = h.beta2;
  }
  s.eps = h.eps;
  return s;
}

void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> exp_avg,
                 std::span<double> exp_avg_sq, std::int64_t step, double lr, double beta1,
                 double beta2, double eps, const AdamOptions& options) {
  if (grads.size() != params.size() || exp_avg.size() != params.size() ||
      exp_avg_sq.size() != params.size()) {
    throw Error("adam_update: parameter, gradient and state shapes differ");
  }
  double step_size = lr;
  double bc2_sqrt = 1.0;
  if (options.bias_correction) {
    const auto t = static_cast<double>(step);
    step_size = lr / (1.0 - std::pow(beta1, t));
    bc2_sqrt = std::sqrt(1.0 - std::pow(beta2, t));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    exp_avg[i] = beta1 * exp_avg[i] + (1.0 - beta1) * g;
    if (!options.freeze_second_moment) exp_avg_sq[i] = beta2 * exp_avg_sq[i] + (1.0 - beta2) * g * g;
    const double denom = std::sqrt(exp_avg_sq[i]) / bc2_sqrt + eps;
    params[i] -= step_size * exp_avg[i] / denom;
  }
}

void adam_step(GaussianCloud& cloud, const GaussianCloud& grads, AdamState& state,
               const ScaledHyperParams& hypers, const AdamOptions& options) {
  if (grads.count() != cloud.count() || state.count() != cloud.count()) {
    throw Error("adam_step: " + std::to_string(cloud.count()) + " Gaussians but " +
                std::to_string(grads.count()) + " gradients and " + std::to_string(state.count()) +
                " optimizer rows; resize the state after densification");
  }
  for (int g = 0; g < kNumGroups; ++g) {
    state.step[g] += 1;
    adam_update(cloud.groups[g], grads.groups[g], state.exp_avg[g], state.exp_avg_sq[g], state.step[g],
                hypers.lr[g], hypers.beta1, hypers.beta2, hypers.eps, options);
  }
  cloud.normalize_rotations();
}

void round_to_float32(GaussianCloud& cloud) {
  for (auto& group : cloud.groups) {
    for (double& v : group) v = static_cast<double>(static_cast<float>(v));
  }
}

}  // namespace grendel
