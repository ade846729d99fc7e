#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "grendel/rasterizer.hpp"

namespace grendel {

/// Division points over a row of per-block costs: with CT the prefix sum and
/// TH[g] = g * CT[B-1] / G, DP[g] counts the blocks with CT <= TH[g]. Worker g
/// owns blocks [DP[g], DP[g+1]) with DP[G] = B implied. An all-zero row falls
/// back to a uniform split.
std::vector<int> compute_division_points(std::span<const double> et, int workers);

/// DP for a row of `blocks` equal-cost blocks.
std::vector<int> uniform_division_points(int blocks, int workers);

/// Summed cost of each worker's range.
std::vector<double> partition_loads(std::span<const double> et, std::span<const int> dp);

/// The blocks of a batch laid out as one row, images in batch order.
struct PixelPartition {
  std::vector<TileGrid> grids;      // per batch slot
  std::vector<int> offsets;         // first global block of each slot
  int total_blocks = 0;
  std::vector<int> dp;              // size G

  PixelPartition() = default;
  PixelPartition(std::vector<TileGrid> grids, std::vector<int> division_points);

  int workers() const { return static_cast<int>(dp.size()); }
  int begin(int rank) const { return dp[rank]; }
  int end(int rank) const { return rank + 1 < workers() ? dp[rank + 1] : total_blocks; }
  /// Owning worker of a global block.
  int owner(int global_block) const;
  /// compute_locally for one worker and batch slot.
  std::vector<std::uint8_t> mask(int rank, int slot) const;
  /// Workers owning at least one block of `range` in `slot`, ascending.
  std::vector<int> owners(int slot, const TileRange& range) const;
  /// Pixels owned by each worker.
  std::vector<std::int64_t> owned_pixels() const;
};

/// Last known per-block cost of each image.
class CostHistory {
 public:
  /// Uniform costs (1 per block) for an unseen image.
  std::vector<double> estimate(int image_id, int blocks) const;
  void record(TimingRecord record);
  bool has(int image_id) const { return records_.count(image_id) != 0; }
  void clear() { records_.clear(); }

 private:
  std::unordered_map<int, TimingRecord> records_;
};

/// Per-image records from one pass in which worker g spent worker_cost[g]:
/// every block g owned is charged g's average per-pixel cost times its pixel
/// count (costs are pooled per worker across the images of the batch).
std::vector<TimingRecord> pooled_records(const PixelPartition& partition, std::span<const double> worker_cost,
                                         std::span<const int> image_ids);

/// Random, size-balanced assignment of `count` items to workers: a keyed
/// permutation dealt round-robin, so sizes differ by at most one.
std::vector<int> shard_assignment(std::size_t count, int workers, std::uint64_t seed);

}  // namespace grendel
