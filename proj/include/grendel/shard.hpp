#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "grendel/gaussian_cloud.hpp"

namespace grendel {

/// Per-Gaussian statistics gathered between densification events.
struct DensifyStats {
  std::vector<double> grad_norm_sum;
  std::vector<double> observations;
  std::vector<double> max_radius;

  DensifyStats() = default;
  explicit DensifyStats(std::size_t n) { resize(n); }
  std::size_t count() const { return grad_norm_sum.size(); }
  void resize(std::size_t n);
  void reset();
  void append_from(const DensifyStats& src, std::size_t i);
  void compact(std::span<const std::uint8_t> keep);

  bool operator==(const DensifyStats&) const = default;
};

/// A set of Gaussians owned by one worker: global ids, parameters, optimizer
/// state and densification statistics, all row-aligned.
struct Shard {
  std::vector<std::uint64_t> ids;
  GaussianCloud cloud;
  AdamState adam;
  DensifyStats stats;

  std::size_t size() const { return ids.size(); }
  /// Checks that every array tracks the same count.
  void check_aligned() const;
  void append_from(const Shard& src, std::size_t i);
  void compact(std::span<const std::uint8_t> keep);
  /// Stable sort of all rows by ascending id.
  void sort_by_id();

  bool operator==(const Shard&) const = default;
};

/// Wraps a full cloud as a single shard with ids 0..n-1 and fresh state.
Shard make_shard(GaussianCloud cloud);

}  // namespace grendel
