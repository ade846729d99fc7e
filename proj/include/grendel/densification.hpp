#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "grendel/shard.hpp"

namespace grendel {

struct DensifyConfig {
  double grad_threshold = 0.0002;
  double scale_split_threshold = 0.01;  // fraction of the scene extent
  double min_opacity = 0.005;
  double max_screen_radius = 0.0;       // pixels; 0 disables the screen-size prune
  double split_scale_divisor = 1.6;
  std::size_t max_gaussians = 0;        // 0 = unlimited
  std::int64_t interval_images = 100;
  std::int64_t start_images = 500;
  std::int64_t stop_images = 15000;
  std::int64_t opacity_reset_images = 3000;
  double opacity_reset_value = 0.01;
};

/// Adds ||grad|| for every visible Gaussian and tracks the largest radius.
/// `grad_mean2d` holds 2 entries per Gaussian.
void accumulate(DensifyStats& stats, std::span<const double> grad_mean2d, std::span<const int> radii,
                std::span<const std::uint8_t> visible);

enum class DensifyAction : std::uint8_t { Keep, Clone, Split, Prune };

/// Per-Gaussian decisions for one densification event.
struct DensifyPlan {
  std::vector<DensifyAction> actions;
  std::size_t clones = 0;
  std::size_t splits = 0;
  std::size_t prunes = 0;

  /// Net change in Gaussian count if applied.
  long long growth() const {
    return static_cast<long long>(clones) + static_cast<long long>(splits) - static_cast<long long>(prunes);
  }
  /// Turns every clone/split back into Keep (budget exhausted).
  void drop_growth();
};

DensifyPlan plan_densify(const Shard& shard, const DensifyConfig& config, double scene_extent);

/// A densified parent and its action, for global id allocation.
struct DensifyRequest {
  std::uint64_t parent_id = 0;
  DensifyAction action = DensifyAction::Keep;
};

std::vector<DensifyRequest> densify_requests(const Shard& shard, const DensifyPlan& plan);

/// Allocates child ids in ascending parent-id order (clone: 1, split: 2),
/// returning the first child id per request in the same order as `requests`
/// after sorting them by parent id. `next_id` advances past the allocation.
std::vector<std::uint64_t> allocate_child_ids(std::vector<DensifyRequest>& requests,
                                              std::uint64_t& next_id);

/// Applies a plan. `first_child_ids[i]` is the id of row i's first child
/// (ignored for Keep/Prune rows). Children are drawn from the parent's
/// Gaussian with a stream keyed by (seed, event, parent id), so the result
/// does not depend on sharding. New rows get zero Adam moments; all stats
/// are reset.
void apply_densify(Shard& shard, const DensifyPlan& plan, std::span<const std::uint64_t> first_child_ids,
                   const DensifyConfig& config, std::uint64_t seed, std::uint64_t event);

/// Single-shard convenience: plan, allocate ids, apply. Returns the plan.
DensifyPlan densify_and_prune(Shard& shard, const DensifyConfig& config, double scene_extent,
                              std::uint64_t& next_id, std::uint64_t seed, std::uint64_t event);

/// Clamps opacity to at most `max_opacity` and zeroes the opacity Adam moments.
void opacity_reset(GaussianCloud& cloud, AdamState& state, double max_opacity = 0.01);

}  // namespace grendel
