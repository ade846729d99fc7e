#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <variant>
#include <vector>

#include "grendel/projection.hpp"

namespace grendel {

/// Projected Gaussians for one batch slot, tagged with the sender-local
/// indices the backward pass sends gradients to.
struct ProjectedPayload {
  int slot = 0;
  std::vector<std::uint32_t> source_index;
  ProjectedShard data;
};

/// Whole blocks of a per-pixel field (rendered color, or SSIM coefficient
/// maps) for halo exchange. `values` holds `channels` per pixel, block by
/// block, row-major within a block.
struct BlockPayload {
  int slot = 0;
  int channels = 0;
  std::vector<int> tiles;
  std::vector<double> values;
};

/// Gradients for the receiver's Gaussians, one row per partial in the order
/// the sender produced them.
struct GradPayload {
  int slot = 0;
  std::vector<std::uint32_t> index;
  std::vector<double> grad;  // kProjGradWidth per entry
};

using Message = std::variant<ProjectedPayload, BlockPayload, GradPayload>;

struct Envelope {
  int source = 0;
  Message message;
};

/// Point-to-point messaging between G ranks. Messages sent before a barrier
/// are received after it; receive() yields them in ascending source rank,
/// preserving send order per source.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual int size() const = 0;
  virtual void send(int source, int dest, Message message) = 0;
  virtual std::vector<Envelope> receive(int rank) = 0;
  /// Called once all ranks finished a phase.
  virtual void barrier() = 0;
  virtual std::uint64_t generation() const = 0;
  virtual void close() = 0;
};

class InProcessTransport final : public Transport {
 public:
  explicit InProcessTransport(int size);
  int size() const override { return size_; }
  void send(int source, int dest, Message message) override;
  std::vector<Envelope> receive(int rank) override;
  void barrier() override;
  std::uint64_t generation() const override { return generation_; }
  void close() override;

 private:
  int size_;
  bool closed_ = false;
  std::uint64_t generation_ = 0;
  std::vector<std::mutex> locks_;
  std::vector<std::vector<Envelope>> pending_;
  std::vector<std::vector<Envelope>> ready_;
};

/// Upper bound on worker threads: GRENDEL_MINI_THREADS when set, else the
/// hardware concurrency.
int thread_cap();

/// Runs fn(rank) for every rank on up to `threads` threads and waits. If any
/// rank throws, the exception of the lowest failing rank is rethrown after
/// all ranks finished.
void run_ranks(int ranks, int threads, const std::function<void(int)>& fn);

}  // namespace grendel
