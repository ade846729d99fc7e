#include "grendel/densification.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "grendel/error.hpp"
#include "grendel/log.hpp"
#include "grendel/rng.hpp"

namespace grendel {

void DensifyStats::resize(std::size_t n) {
  grad_norm_sum.resize(n, 0.0);
  observations.resize(n, 0.0);
  max_radius.resize(n, 0.0);
}

void DensifyStats::reset() {
  std::fill(grad_norm_sum.begin(), grad_norm_sum.end(), 0.0);
  std::fill(observations.begin(), observations.end(), 0.0);
  std::fill(max_radius.begin(), max_radius.end(), 0.0);
}

void DensifyStats::append_from(const DensifyStats& src, std::size_t i) {
  grad_norm_sum.push_back(src.grad_norm_sum[i]);
  observations.push_back(src.observations[i]);
  max_radius.push_back(src.max_radius[i]);
}

void DensifyStats::compact(std::span<const std::uint8_t> keep) {
  std::size_t out = 0;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i]) continue;
    grad_norm_sum[out] = grad_norm_sum[i];
    observations[out] = observations[i];
    max_radius[out] = max_radius[i];
    ++out;
  }
  grad_norm_sum.resize(out);
  observations.resize(out);
  max_radius.resize(out);
}

void Shard::check_aligned() const {
  const std::size_t n = ids.size();
  if (cloud.count() != n || adam.count() != n || stats.count() != n) {
    throw Error("shard arrays out of alignment: " + std::to_string(n) + " ids, " +
                std::to_string(cloud.count()) + " Gaussians, " + std::to_string(adam.count()) +
                " optimizer rows, " + std::to_string(stats.count()) + " stat rows");
  }
}

void Shard::append_from(const Shard& src, std::size_t i) {
  ids.push_back(src.ids[i]);
  cloud.append_from(src.cloud, i);
  adam.append_from(src.adam, i);
  stats.append_from(src.stats, i);
}

void Shard::compact(std::span<const std::uint8_t> keep) {
  std::size_t out = 0;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i]) ids[out++] = ids[i];
  }
  ids.resize(out);
  cloud.compact(keep);
  adam.compact(keep);
  stats.compact(keep);
}

void Shard::sort_by_id() {
  std::vector<std::size_t> order(size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  Shard sorted;
  sorted.adam.step = adam.step;
  for (auto i : order) sorted.append_from(*this, i);
  *this = std::move(sorted);
}

Shard make_shard(GaussianCloud cloud) {
  Shard s;
  const std::size_t n = cloud.count();
  s.ids.resize(n);
  std::iota(s.ids.begin(), s.ids.end(), 0);
  s.cloud = std::move(cloud);
  s.adam.resize(n);
  s.stats.resize(n);
  return s;
}

void accumulate(DensifyStats& stats, std::span<const double> grad_mean2d, std::span<const int> radii,
                std::span<const std::uint8_t> visible) {
  const std::size_t n = stats.count();
  if (grad_mean2d.size() != 2 * n || radii.size() != n || visible.size() != n) {
    throw Error("densify accumulate: arrays are not aligned with the stats");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!visible[i]) continue;
    stats.grad_norm_sum[i] += std::hypot(grad_mean2d[2 * i], grad_mean2d[2 * i + 1]);
    stats.observations[i] += 1.0;
    stats.max_radius[i] = std::max(stats.max_radius[i], static_cast<double>(radii[i]));
  }
}

void DensifyPlan::drop_growth() {
  for (auto& a : actions) {
    if (a == DensifyAction::Clone || a == DensifyAction::Split) a = DensifyAction::Keep;
  }
  clones = 0;
  splits = 0;
}

DensifyPlan plan_densify(const Shard& shard, const DensifyConfig& config, double scene_extent) {
  shard.check_aligned();
  DensifyPlan plan;
  const std::size_t n = shard.size();
  plan.actions.assign(n, DensifyAction::Keep);
  for (std::size_t i = 0; i < n; ++i) {
    const bool too_big = config.max_screen_radius > 0.0 && shard.stats.max_radius[i] > config.max_screen_radius;
    if (shard.cloud.opacity(i) < config.min_opacity || too_big) {
      plan.actions[i] = DensifyAction::Prune;
      ++plan.prunes;
      continue;
    }
    const double obs = shard.stats.observations[i];
    if (obs <= 0.0) continue;
    const double avg = shard.stats.grad_norm_sum[i] / obs;
    if (avg < config.grad_threshold) continue;
    const double max_scale = shard.cloud.scale(i).maxCoeff();
    if (max_scale <= config.scale_split_threshold * scene_extent) {
      plan.actions[i] = DensifyAction::Clone;
      ++plan.clones;
    } else {
      plan.actions[i] = DensifyAction::Split;
      ++plan.splits;
    }
  }
  return plan;
}

std::vector<DensifyRequest> densify_requests(const Shard& shard, const DensifyPlan& plan) {
  std::vector<DensifyRequest> out;
  for (std::size_t i = 0; i < shard.size(); ++i) {
    if (plan.actions[i] == DensifyAction::Clone || plan.actions[i] == DensifyAction::Split) {
      out.push_back({shard.ids[i], plan.actions[i]});
    }
  }
  return out;
}

std::vector<std::uint64_t> allocate_child_ids(std::vector<DensifyRequest>& requests, std::uint64_t& next_id) {
  std::sort(requests.begin(), requests.end(),
            [](const DensifyRequest& a, const DensifyRequest& b) { return a.parent_id < b.parent_id; });
  std::vector<std::uint64_t> first(requests.size());
  for (std::size_t k = 0; k < requests.size(); ++k) {
    first[k] = next_id;
    next_id += requests[k].action == DensifyAction::Split ? 2 : 1;
  }
  return first;
}

namespace {

// One sample from the parent's Gaussian: position + R(q) * diag(s) * z.
Eigen::Vector3d sample_from(const GaussianCloud& cloud, std::size_t i, KeyedRng& rng) {
  const Eigen::Vector3d z(rng.normal(), rng.normal(), rng.normal());
  const Eigen::Vector4d q = cloud.rotation(i).normalized();
  return cloud.position(i) + quaternion_to_matrix(q) * cloud.scale(i).cwiseProduct(z);
}

}  // namespace

void apply_densify(Shard& shard, const DensifyPlan& plan, std::span<const std::uint64_t> first_child_ids,
                   const DensifyConfig& config, std::uint64_t seed, std::uint64_t event) {
  shard.check_aligned();
  const std::size_t n = shard.size();
  if (plan.actions.size() != n || first_child_ids.size() != n) {
    throw Error("apply_densify: plan does not match the shard");
  }
  std::vector<std::uint8_t> keep(n, 1);
  Shard children;
  for (std::size_t i = 0; i < n; ++i) {
    const DensifyAction a = plan.actions[i];
    if (a == DensifyAction::Prune) {
      keep[i] = 0;
      continue;
    }
    if (a == DensifyAction::Keep) continue;
    KeyedRng rng(seed, event, shard.ids[i], 0x64656e73ULL);
    const int num_children = a == DensifyAction::Split ? 2 : 1;
    for (int c = 0; c < num_children; ++c) {
      const Eigen::Vector3d pos = sample_from(shard.cloud, i, rng);
      children.ids.push_back(first_child_ids[i] + static_cast<std::uint64_t>(c));
      children.cloud.append_from(shard.cloud, i);
      const std::size_t row = children.cloud.count() - 1;
      auto p = children.cloud.row(Group::Position, row);
      for (int k = 0; k < 3; ++k) p[k] = pos[k];
      if (a == DensifyAction::Split) {
        for (double& ls : children.cloud.row(Group::LogScale, row)) ls -= std::log(config.split_scale_divisor);
      }
    }
    if (a == DensifyAction::Split) keep[i] = 0;
  }
  children.adam.resize(children.ids.size());
  children.stats.resize(children.ids.size());

  shard.compact(keep);
  for (std::size_t i = 0; i < children.size(); ++i) shard.append_from(children, i);
  shard.stats.reset();
}

DensifyPlan densify_and_prune(Shard& shard, const DensifyConfig& config, double scene_extent,
                              std::uint64_t& next_id, std::uint64_t seed, std::uint64_t event) {
  DensifyPlan plan = plan_densify(shard, config, scene_extent);
  if (config.max_gaussians > 0 &&
      static_cast<long long>(shard.size()) + plan.growth() > static_cast<long long>(config.max_gaussians)) {
    log_warning("Gaussian budget of " + std::to_string(config.max_gaussians) + " would be exceeded; skipping growth");
    plan.drop_growth();
  }
  auto requests = densify_requests(shard, plan);
  const auto first = allocate_child_ids(requests, next_id);
  std::unordered_map<std::uint64_t, std::uint64_t> by_parent;
  for (std::size_t k = 0; k < requests.size(); ++k) by_parent[requests[k].parent_id] = first[k];
  std::vector<std::uint64_t> first_child(shard.size(), 0);
  for (std::size_t i = 0; i < shard.size(); ++i) {
    if (auto it = by_parent.find(shard.ids[i]); it != by_parent.end()) first_child[i] = it->second;
  }
  apply_densify(shard, plan, first_child, config, seed, event);
  return plan;
}

void opacity_reset(GaussianCloud& cloud, AdamState& state, double max_opacity) {
  const double cap = inverse_sigmoid(max_opacity);
  for (double& logit : cloud.data(Group::OpacityLogit)) logit = std::min(logit, cap);
  auto& m = state.exp_avg[group_index(Group::OpacityLogit)];
  auto& v = state.exp_avg_sq[group_index(Group::OpacityLogit)];
  std::fill(m.begin(), m.end(), 0.0);
  std::fill(v.begin(), v.end(), 0.0);
}

}  // namespace grendel
