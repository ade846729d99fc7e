#include "grendel/partition.hpp"

#include <algorithm>
#include <numeric>

#include "grendel/error.hpp"
#include "grendel/rng.hpp"

namespace grendel {

std::vector<int> uniform_division_points(int blocks, int workers) {
  if (workers < 1) throw Error("need at least one worker");
  std::vector<int> dp(workers);
  for (int g = 0; g < workers; ++g) {
    dp[g] = static_cast<int>(static_cast<std::int64_t>(blocks) * g / workers);
  }
  return dp;
}

std::vector<int> compute_division_points(std::span<const double> et, int workers) {
  if (workers < 1) throw Error("need at least one worker");
  if (et.empty()) throw Error("division points need at least one block");
  std::vector<double> ct(et.size());
  double run = 0.0;
  for (std::size_t i = 0; i < et.size(); ++i) {
    if (!(et[i] >= 0.0)) throw Error("block cost estimates must be non-negative");
    run += et[i];
    ct[i] = run;
  }
  const double total = ct.back();
  if (total <= 0.0) return uniform_division_points(static_cast<int>(et.size()), workers);
  const double per_worker = total / workers;
  // DP[0] stays 0: counting CT <= 0 would orphan leading zero-cost blocks.
  std::vector<int> dp(workers, 0);
  for (int g = 1; g < workers; ++g) {
    const double th = g * per_worker;
    dp[g] = static_cast<int>(std::upper_bound(ct.begin(), ct.end(), th) - ct.begin());
  }
  return dp;
}

std::vector<double> partition_loads(std::span<const double> et, std::span<const int> dp) {
  const int g_count = static_cast<int>(dp.size());
  std::vector<double> loads(g_count, 0.0);
  for (int g = 0; g < g_count; ++g) {
    const int e = g + 1 < g_count ? dp[g + 1] : static_cast<int>(et.size());
    for (int i = dp[g]; i < e; ++i) loads[g] += et[i];
  }
  return loads;
}

PixelPartition::PixelPartition(std::vector<TileGrid> g, std::vector<int> division_points)
    : grids(std::move(g)), dp(std::move(division_points)) {
  for (const auto& grid : grids) {
    offsets.push_back(total_blocks);
    total_blocks += grid.count();
  }
  if (dp.empty() || dp[0] != 0 || !std::is_sorted(dp.begin(), dp.end()) || dp.back() > total_blocks) {
    throw Error("invalid division points");
  }
}

int PixelPartition::owner(int global_block) const {
  return static_cast<int>(std::upper_bound(dp.begin(), dp.end(), global_block) - dp.begin()) - 1;
}

std::vector<std::uint8_t> PixelPartition::mask(int rank, int slot) const {
  const int n = grids[slot].count();
  std::vector<std::uint8_t> m(n, 0);
  const int lo = std::max(begin(rank) - offsets[slot], 0);
  const int hi = std::min(end(rank) - offsets[slot], n);
  for (int t = lo; t < hi; ++t) m[t] = 1;
  return m;
}

std::vector<int> PixelPartition::owners(int slot, const TileRange& range) const {
  std::vector<int> out;
  if (range.empty()) return out;
  const TileGrid& grid = grids[slot];
  for (int ty = range.y0; ty <= range.y1; ++ty) {
    const int first = offsets[slot] + ty * grid.tiles_x + range.x0;
    const int last = offsets[slot] + ty * grid.tiles_x + range.x1;
    for (int g = owner(first); g <= owner(last); ++g) {
      // Skip workers with an empty range; they own nothing in between.
      if (begin(g) < end(g)) out.push_back(g);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::int64_t> PixelPartition::owned_pixels() const {
  std::vector<std::int64_t> px(workers(), 0);
  for (std::size_t s = 0; s < grids.size(); ++s) {
    for (int t = 0; t < grids[s].count(); ++t) px[owner(offsets[s] + t)] += grids[s].block_rect(t).pixels();
  }
  return px;
}

std::vector<double> CostHistory::estimate(int image_id, int blocks) const {
  auto it = records_.find(image_id);
  if (it == records_.end() || static_cast<int>(it->second.block_cost.size()) != blocks) {
    return std::vector<double>(blocks, 1.0);
  }
  return it->second.block_cost;
}

void CostHistory::record(TimingRecord record) {
  const int id = record.image_id;
  records_[id] = std::move(record);
}

std::vector<TimingRecord> pooled_records(const PixelPartition& partition, std::span<const double> worker_cost,
                                         std::span<const int> image_ids) {
  if (static_cast<int>(worker_cost.size()) != partition.workers() || image_ids.size() != partition.grids.size()) {
    throw Error("pooled_records: sizes do not match the partition");
  }
  const auto pixels = partition.owned_pixels();
  std::vector<double> per_pixel(worker_cost.size(), 0.0);
  for (std::size_t g = 0; g < worker_cost.size(); ++g) {
    if (pixels[g] > 0) per_pixel[g] = worker_cost[g] / static_cast<double>(pixels[g]);
  }
  std::vector<TimingRecord> out;
  for (std::size_t s = 0; s < partition.grids.size(); ++s) {
    TimingRecord r;
    r.image_id = image_ids[s];
    const TileGrid& grid = partition.grids[s];
    r.block_cost.resize(grid.count());
    for (int t = 0; t < grid.count(); ++t) {
      r.block_cost[t] = per_pixel[partition.owner(partition.offsets[s] + t)] * grid.block_rect(t).pixels();
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<int> shard_assignment(std::size_t count, int workers, std::uint64_t seed) {
  if (workers < 1) throw Error("need at least one worker");
  std::vector<std::size_t> perm(count);
  std::iota(perm.begin(), perm.end(), 0);
  KeyedRng rng(seed, 0x5A4DULL);
  for (std::size_t i = count; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::vector<int> assign(count);
  for (std::size_t k = 0; k < count; ++k) assign[perm[k]] = static_cast<int>(k % workers);
  return assign;
}

}  // namespace grendel
