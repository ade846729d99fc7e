#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "grendel/camera.hpp"
#include "grendel/densification.hpp"
#include "grendel/image.hpp"
#include "grendel/optimizer.hpp"
#include "grendel/partition.hpp"
#include "grendel/pipeline.hpp"
#include "grendel/scene_io.hpp"
#include "grendel/shard.hpp"
#include "grendel/transport.hpp"

namespace grendel {

struct EngineConfig {
  int workers = 1;
  int batch_size = 1;
  bool rebalance_pixels = true;
  bool rebalance_gaussians = true;
  // Block cost = composited terms instead of wall time; ET then equals the
  // per-block term counts of the image's previous pass.
  bool deterministic_cost = false;
  bool float32 = false;
  bool densify = true;
  int threads = 0;  // 0: thread_cap()
  std::uint64_t seed = 0;
  HyperParams hyper;
  DensifyConfig densify_config;
  PipelineSettings pipeline;
};

struct StepMetrics {
  std::int64_t iteration = 0;
  std::int64_t images_seen = 0;
  double loss = 0.0;
  std::vector<double> worker_cost;
  double imbalance = 1.0;                 // max / mean worker cost
  std::uint64_t exchange_volume = 0;      // projected Gaussians delivered, self included
  std::uint64_t dense_bound = 0;          // G * N per image
  std::uint64_t false_deliveries = 0;     // received but overlapping no owned block
  std::size_t gaussians = 0;
  bool densified = false;
  std::vector<int> division_points;
};

void write_metrics_header(std::ostream& out, int workers);
void write_metrics_row(std::ostream& out, const StepMetrics& m);

/// G simulated workers training one scene. Each step runs five phases
/// separated by transport barriers:
///   1. project the local shard for every image of the batch, send each
///      visible Gaussian to the owners of the blocks its footprint touches;
///   2. merge arrivals, render owned blocks, send block pixels to neighbors
///      (SSIM halo);
///   3. L1 and the SSIM forward on owned blocks, send SSIM coefficient halos;
///   4. SSIM backward, render backward, send per-tile partial gradients back
///      to the Gaussians' owners;
///   5. sum partials in source-rank order, transform backward, Adam.
/// Densification and Gaussian redistribution follow on the coordinator.
class Engine {
 public:
  Engine(EngineConfig config, std::vector<CameraView> cameras, std::vector<Image> targets, double extent,
         std::unique_ptr<Transport> transport = nullptr);
  ~Engine();

  /// Fresh ids 0..n-1 and optimizer state, randomly sharded.
  void initialize(const GaussianCloud& cloud);
  void restore(const Checkpoint& checkpoint);

  /// One optimizer step on the cameras at the given indices (batch order).
  StepMetrics train_step(std::span<const int> camera_indices);

  /// All shards merged, sorted by id.
  Checkpoint checkpoint() const;
  GaussianCloud gather() const;

  const std::vector<Shard>& shards() const { return shards_; }
  std::int64_t images_seen() const { return images_seen_; }
  std::int64_t iteration() const { return iteration_; }
  const EngineConfig& config() const { return config_; }
  const CostHistory& history() const { return history_; }
  const std::vector<CameraView>& cameras() const { return cameras_; }
  double extent() const { return extent_; }

 private:
  struct Scratch;
  void phase_project(int rank, const PixelPartition& part, std::span<const int> cams);
  void phase_render(int rank, const PixelPartition& part, std::span<const int> cams);
  void phase_loss(int rank, const PixelPartition& part, std::span<const int> cams);
  void phase_backward(int rank, const PixelPartition& part, std::span<const int> cams);
  void phase_update(int rank, const PixelPartition& part, std::span<const int> cams);
  void run_phase(void (Engine::*phase)(int, const PixelPartition&, std::span<const int>),
                 const PixelPartition& part, std::span<const int> cams);
  PixelPartition plan_partition(std::span<const int> cams) const;
  bool densify_and_rebalance(std::int64_t before, std::int64_t after);

  EngineConfig config_;
  std::vector<CameraView> cameras_;
  std::vector<Image> targets_;
  double extent_;
  std::unique_ptr<Transport> transport_;
  std::vector<Shard> shards_;
  std::vector<Scratch> scratch_;
  CostHistory history_;
  std::int64_t images_seen_ = 0;
  std::int64_t iteration_ = 0;
  std::uint64_t next_id_ = 0;
  int threads_ = 1;
  bool budget_warned_ = false;
  int last_batch_ = 0;
};

/// Splits one shard into G by a keyed random assignment; each result is
/// sorted by id and the optimizer step counters are carried over.
std::vector<Shard> shard_gaussians(const Shard& all, int workers, std::uint64_t seed);

/// Random redistribution of all Gaussians (with optimizer state and stats)
/// so shard sizes differ by at most one.
std::vector<Shard> rebalance_gaussians(const std::vector<Shard>& shards, int workers, std::uint64_t seed);

/// Concatenation of shards sorted by id.
Shard merge_shards(const std::vector<Shard>& shards);

/// Training image order: a fresh keyed permutation of `indices` each epoch.
class ViewStream {
 public:
  ViewStream(std::vector<int> indices, std::uint64_t seed);
  std::vector<int> next(int count);

 private:
  void refill();
  std::vector<int> indices_;
  std::vector<int> order_;
  std::size_t pos_ = 0;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
};

}  // namespace grendel
