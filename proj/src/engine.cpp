#include "grendel/engine.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include "grendel/error.hpp"
#include "grendel/log.hpp"
#include "grendel/rng.hpp"

namespace grendel {

namespace {

using Clock = std::chrono::steady_clock;

double nanos_since(Clock::time_point start) {
  return std::chrono::duration<double, std::nano>(Clock::now() - start).count();
}

// Blocks of the 3x3 neighborhood; enough while the SSIM halo is below the
// block size.
std::vector<int> neighbor_tiles(const TileGrid& grid, int tile) {
  std::vector<int> out;
  const int tx = tile % grid.tiles_x, ty = tile / grid.tiles_x;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const int x = tx + dx, y = ty + dy;
      if ((dx || dy) && x >= 0 && y >= 0 && x < grid.tiles_x && y < grid.tiles_y) out.push_back(y * grid.tiles_x + x);
    }
  }
  return out;
}

}  // namespace

struct Engine::Scratch {
  struct Slot {
    ProjectedShard local;
    ProjectedShard received;
    std::vector<int> recv_source;
    std::vector<std::uint32_t> recv_index;
    TileZBuffer zbuf;
    std::vector<std::uint8_t> mask;
    std::vector<int> owned;
    Image rendered;
    RenderAux aux;
    Image grad;
    SsimMaps maps;
    bool ssim = true;
    std::vector<double> block_cost;  // per tile of the grid
    std::vector<double> l1_sum;
    std::vector<double> ssim_sum;
    ProjectedGrads local_grad;
  };
  std::vector<Slot> slots;
  std::uint64_t sent = 0;
  std::uint64_t false_deliveries = 0;
  GaussianCloud grad;
};

Engine::Engine(EngineConfig config, std::vector<CameraView> cameras, std::vector<Image> targets, double extent,
               std::unique_ptr<Transport> transport)
    : config_(std::move(config)),
      cameras_(std::move(cameras)),
      targets_(std::move(targets)),
      extent_(extent),
      transport_(std::move(transport)) {
  if (config_.workers < 1) throw Error("engine needs at least one worker");
  if (config_.batch_size < 1) throw Error("batch size must be >= 1");
  if (cameras_.size() != targets_.size()) throw Error("engine: need one target image per camera");
  for (std::size_t i = 0; i < cameras_.size(); ++i) {
    if (targets_[i].width != cameras_[i].width || targets_[i].height != cameras_[i].height) {
      throw Error("engine: target size does not match camera " + std::to_string(cameras_[i].id));
    }
  }
  config_.hyper.validate();
  if (!transport_) transport_ = std::make_unique<InProcessTransport>(config_.workers);
  if (transport_->size() != config_.workers) throw Error("transport size does not match the worker count");
  threads_ = config_.threads > 0 ? config_.threads : thread_cap();
  scratch_.resize(config_.workers);
}

Engine::~Engine() = default;

void Engine::initialize(const GaussianCloud& cloud) {
  Shard all = make_shard(cloud);
  shards_ = shard_gaussians(all, config_.workers, config_.seed);
  next_id_ = cloud.count();
  images_seen_ = 0;
  iteration_ = 0;
  history_.clear();
}

void Engine::restore(const Checkpoint& ck) {
  Shard all;
  all.ids = ck.ids;
  all.cloud = ck.cloud;
  all.adam = ck.adam;
  all.stats.resize(ck.cloud.count());
  all.check_aligned();
  shards_ = shard_gaussians(all, config_.workers, config_.seed);
  next_id_ = ck.next_id;
  for (auto id : ck.ids) next_id_ = std::max(next_id_, id + 1);
  images_seen_ = ck.images_seen;
  iteration_ = ck.iteration;
  history_.clear();
}

Checkpoint Engine::checkpoint() const {
  Shard all = merge_shards(shards_);
  Checkpoint ck;
  ck.cloud = std::move(all.cloud);
  ck.adam = std::move(all.adam);
  ck.ids = std::move(all.ids);
  ck.images_seen = images_seen_;
  ck.iteration = iteration_;
  ck.seed = config_.seed;
  ck.next_id = next_id_;
  return ck;
}

GaussianCloud Engine::gather() const { return merge_shards(shards_).cloud; }

PixelPartition Engine::plan_partition(std::span<const int> cams) const {
  std::vector<TileGrid> grids;
  std::vector<double> et;
  std::vector<std::vector<double>> per_slot;
  double seen_sum = 0.0;
  std::size_t seen_blocks = 0;
  for (int c : cams) {
    grids.push_back(TileGrid::for_image(cameras_[c].width, cameras_[c].height));
    const int blocks = grids.back().count();
    const bool seen = history_.has(cameras_[c].id);
    per_slot.push_back(history_.estimate(cameras_[c].id, blocks));
    if (seen) {
      for (double v : per_slot.back()) seen_sum += v;
      seen_blocks += static_cast<std::size_t>(blocks);
    }
  }
  const int total = std::accumulate(grids.begin(), grids.end(), 0, [](int a, const TileGrid& g) { return a + g.count(); });
  if (!config_.rebalance_pixels) return PixelPartition(grids, uniform_division_points(total, config_.workers));
  // Unseen images in a batch with seen ones get the seen images' mean block
  // cost so the two are on the same scale.
  const double fill = seen_blocks > 0 ? seen_sum / static_cast<double>(seen_blocks) : 1.0;
  for (std::size_t s = 0; s < cams.size(); ++s) {
    const bool seen = history_.has(cameras_[cams[s]].id);
    for (double v : per_slot[s]) et.push_back(seen ? v : fill);
  }
  return PixelPartition(grids, compute_division_points(et, config_.workers));
}

void Engine::run_phase(void (Engine::*phase)(int, const PixelPartition&, std::span<const int>),
                       const PixelPartition& part, std::span<const int> cams) {
  run_ranks(config_.workers, threads_, [&](int r) { (this->*phase)(r, part, cams); });
  transport_->barrier();
}

StepMetrics Engine::train_step(std::span<const int> cams) {
  if (shards_.empty()) throw Error("engine not initialized");
  if (cams.empty()) throw Error("empty batch");
  for (int c : cams) {
    if (c < 0 || static_cast<std::size_t>(c) >= cameras_.size()) throw Error("batch references an unknown camera");
  }
  const int b = static_cast<int>(cams.size());
  if (config_.hyper.reset_on_batch_change && last_batch_ != 0 && b != last_batch_) {
    for (auto& s : shards_) s.adam = AdamState(s.size());
  }
  last_batch_ = b;
  const PixelPartition part = plan_partition(cams);

  run_phase(&Engine::phase_project, part, cams);
  run_phase(&Engine::phase_render, part, cams);
  run_phase(&Engine::phase_loss, part, cams);
  run_phase(&Engine::phase_backward, part, cams);
  run_phase(&Engine::phase_update, part, cams);

  const int g_count = config_.workers;
  StepMetrics m;
  m.division_points = part.dp;
  m.worker_cost.assign(g_count, 0.0);
  std::size_t n_total = 0;
  for (const auto& s : shards_) n_total += s.size();
  const double lam_base = config_.pipeline.loss.lambda_ssim;
  double loss_sum = 0.0;
  for (int s = 0; s < b; ++s) {
    const TileGrid& grid = part.grids[s];
    std::vector<double> block_cost(grid.count(), 0.0);
    double l1 = 0.0, ss = 0.0;
    bool ssim_on = true;
    for (int t = 0; t < grid.count(); ++t) {
      const int owner = part.owner(part.offsets[s] + t);
      const auto& slot = scratch_[owner].slots[s];
      l1 += slot.l1_sum[t];
      ss += slot.ssim_sum[t];
      ssim_on = slot.ssim;
      block_cost[t] = slot.block_cost[t];
      m.worker_cost[owner] += slot.block_cost[t];
    }
    const double inv_count = 1.0 / static_cast<double>(targets_[cams[s]].data.size());
    const double lam = ssim_on ? lam_base : 0.0;
    l1 *= inv_count;
    const double ssim_mean = ssim_on ? ss * inv_count : 1.0;
    loss_sum += ssim_on ? (1.0 - lam) * l1 + lam * (1.0 - ssim_mean) : l1;
    if (config_.deterministic_cost) history_.record({cameras_[cams[s]].id, std::move(block_cost)});
  }
  if (!config_.deterministic_cost) {
    std::vector<int> ids;
    for (int c : cams) ids.push_back(cameras_[c].id);
    for (auto& rec : pooled_records(part, m.worker_cost, ids)) history_.record(std::move(rec));
  }
  m.loss = loss_sum / b;
  const double mean_cost = std::accumulate(m.worker_cost.begin(), m.worker_cost.end(), 0.0) / g_count;
  const double max_cost = *std::max_element(m.worker_cost.begin(), m.worker_cost.end());
  m.imbalance = mean_cost > 0.0 ? max_cost / mean_cost : 1.0;
  for (const auto& sc : scratch_) {
    m.exchange_volume += sc.sent;
    m.false_deliveries += sc.false_deliveries;
  }
  m.dense_bound = static_cast<std::uint64_t>(g_count) * n_total * static_cast<std::uint64_t>(b);

  const std::int64_t before = images_seen_;
  images_seen_ += b;
  ++iteration_;
  m.densified = densify_and_rebalance(before, images_seen_);
  m.iteration = iteration_;
  m.images_seen = images_seen_;
  m.gaussians = 0;
  for (const auto& s : shards_) m.gaussians += s.size();
  return m;
}

// Phase 1: project and send.
void Engine::phase_project(int rank, const PixelPartition& part, std::span<const int> cams) {
  Scratch& sc = scratch_[rank];
  const Shard& shard = shards_[rank];
  const int b = static_cast<int>(cams.size());
  sc.slots.assign(b, {});
  sc.sent = 0;
  sc.false_deliveries = 0;
  for (int s = 0; s < b; ++s) {
    auto& slot = sc.slots[s];
    slot.local = transform_gaussians(shard.cloud, shard.ids, cameras_[cams[s]], config_.pipeline.projection);
    std::vector<ProjectedPayload> out(config_.workers);
    for (std::size_t i = 0; i < slot.local.size(); ++i) {
      if (!slot.local.visible[i]) continue;
      const TileRange range = footprint_tiles(part.grids[s], slot.local.mean2d[2 * i], slot.local.mean2d[2 * i + 1],
                                              slot.local.radius[i]);
      for (int dest : part.owners(s, range)) {
        out[dest].source_index.push_back(static_cast<std::uint32_t>(i));
        out[dest].data.append_from(slot.local, i);
      }
    }
    for (int dest = 0; dest < config_.workers; ++dest) {
      if (out[dest].source_index.empty()) continue;
      out[dest].slot = s;
      sc.sent += out[dest].source_index.size();
      transport_->send(rank, dest, std::move(out[dest]));
    }
  }
}

// Phase 2: merge, render owned blocks, send pixel halos.
void Engine::phase_render(int rank, const PixelPartition& part, std::span<const int> cams) {
  Scratch& sc = scratch_[rank];
  const int b = static_cast<int>(cams.size());
  for (auto& env : transport_->receive(rank)) {
    auto* p = std::get_if<ProjectedPayload>(&env.message);
    if (!p) throw Error("engine: unexpected message in the projection exchange");
    auto& slot = sc.slots[p->slot];
    for (std::size_t k = 0; k < p->source_index.size(); ++k) {
      slot.received.append_from(p->data, k);
      slot.recv_source.push_back(env.source);
      slot.recv_index.push_back(p->source_index[k]);
    }
  }
  for (int s = 0; s < b; ++s) {
    auto& slot = sc.slots[s];
    const CameraView& cam = cameras_[cams[s]];
    const TileGrid& grid = part.grids[s];
    slot.mask = part.mask(rank, s);
    slot.owned.clear();
    for (int t = 0; t < grid.count(); ++t) {
      if (slot.mask[t]) slot.owned.push_back(t);
    }
    for (std::size_t i = 0; i < slot.received.size(); ++i) {
      const TileRange r = footprint_tiles(grid, slot.received.mean2d[2 * i], slot.received.mean2d[2 * i + 1],
                                          slot.received.radius[i]);
      bool hit = false;
      for (int ty = r.y0; ty <= r.y1 && !hit; ++ty) {
        for (int tx = r.x0; tx <= r.x1 && !hit; ++tx) hit = slot.mask[ty * grid.tiles_x + tx] != 0;
      }
      if (!hit) ++sc.false_deliveries;
    }
    slot.zbuf = build_tile_lists(slot.received, grid, slot.mask);
    slot.rendered = Image(cam.width, cam.height);
    slot.aux.resize(slot.rendered.pixel_count());
    slot.block_cost.assign(grid.count(), 0.0);
    slot.l1_sum.assign(grid.count(), 0.0);
    slot.ssim_sum.assign(grid.count(), 0.0);
    slot.ssim = ssim_applicable(cam.width, cam.height, config_.pipeline.loss.ssim);
    for (int t : slot.owned) {
      const auto start = Clock::now();
      const auto terms = render_tile(slot.zbuf, slot.received, t, config_.pipeline.render, slot.rendered, slot.aux);
      slot.block_cost[t] = config_.deterministic_cost ? static_cast<double>(terms) : nanos_since(start);
    }
    if (!slot.ssim) continue;
    // Every owned block goes to the owners of its neighbors.
    std::vector<BlockPayload> out(config_.workers);
    for (int t : slot.owned) {
      std::vector<int> dests;
      for (int n : neighbor_tiles(grid, t)) {
        const int o = part.owner(part.offsets[s] + n);
        if (o != rank) dests.push_back(o);
      }
      std::sort(dests.begin(), dests.end());
      dests.erase(std::unique(dests.begin(), dests.end()), dests.end());
      if (dests.empty()) continue;
      const PixelRect r = grid.block_rect(t);
      for (int d : dests) {
        out[d].tiles.push_back(t);
        for (int y = r.y0; y < r.y1; ++y) {
          for (int x = r.x0; x < r.x1; ++x) {
            for (int c = 0; c < 3; ++c) out[d].values.push_back(slot.rendered.at(x, y, c));
          }
        }
      }
    }
    for (int d = 0; d < config_.workers; ++d) {
      if (out[d].tiles.empty()) continue;
      out[d].slot = s;
      out[d].channels = 3;
      transport_->send(rank, d, std::move(out[d]));
    }
  }
}

// Phase 3: L1 and SSIM forward on owned blocks, send coefficient halos.
void Engine::phase_loss(int rank, const PixelPartition& part, std::span<const int> cams) {
  Scratch& sc = scratch_[rank];
  const int b = static_cast<int>(cams.size());
  for (auto& env : transport_->receive(rank)) {
    auto* p = std::get_if<BlockPayload>(&env.message);
    if (!p || p->channels != 3) throw Error("engine: unexpected message in the pixel halo exchange");
    auto& slot = sc.slots[p->slot];
    const TileGrid& grid = part.grids[p->slot];
    std::size_t k = 0;
    for (int t : p->tiles) {
      const PixelRect r = grid.block_rect(t);
      for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) {
          for (int c = 0; c < 3; ++c) slot.rendered.at(x, y, c) = p->values[k++];
        }
      }
    }
  }
  const auto& ls = config_.pipeline.loss;
  const auto weights = ls.ssim.weights();
  for (int s = 0; s < b; ++s) {
    auto& slot = sc.slots[s];
    const Image& target = targets_[cams[s]];
    const TileGrid& grid = part.grids[s];
    const double inv_count = 1.0 / static_cast<double>(target.data.size());
    const double lam = slot.ssim ? ls.lambda_ssim : 0.0;
    slot.grad = Image(target.width, target.height);
    if (slot.ssim) slot.maps = SsimMaps(target.width, target.height);
    for (int t : slot.owned) {
      const auto start = Clock::now();
      slot.l1_sum[t] = l1_block(slot.rendered, target, grid, t, (1.0 - lam) * inv_count, slot.grad);
      if (slot.ssim) slot.ssim_sum[t] = ssim_forward_block(slot.rendered, target, grid, t, ls.ssim, weights, slot.maps);
      if (!config_.deterministic_cost) slot.block_cost[t] += nanos_since(start);
    }
    if (!slot.ssim) continue;
    std::vector<BlockPayload> out(config_.workers);
    for (int t : slot.owned) {
      std::vector<int> dests;
      for (int n : neighbor_tiles(grid, t)) {
        const int o = part.owner(part.offsets[s] + n);
        if (o != rank) dests.push_back(o);
      }
      std::sort(dests.begin(), dests.end());
      dests.erase(std::unique(dests.begin(), dests.end()), dests.end());
      const PixelRect r = grid.block_rect(t);
      for (int d : dests) {
        out[d].tiles.push_back(t);
        for (int y = r.y0; y < r.y1; ++y) {
          for (int x = r.x0; x < r.x1; ++x) {
            for (int c = 0; c < 3; ++c) {
              const std::size_t i = target.index(x, y, c);
              out[d].values.push_back(slot.maps.d_mu[i]);
              out[d].values.push_back(slot.maps.d_xx[i]);
              out[d].values.push_back(slot.maps.d_xy[i]);
            }
          }
        }
      }
    }
    for (int d = 0; d < config_.workers; ++d) {
      if (out[d].tiles.empty()) continue;
      out[d].slot = s;
      out[d].channels = 9;
      transport_->send(rank, d, std::move(out[d]));
    }
  }
}

// Phase 4: SSIM backward, render backward, send partials to owners.
void Engine::phase_backward(int rank, const PixelPartition& part, std::span<const int> cams) {
  Scratch& sc = scratch_[rank];
  const int b = static_cast<int>(cams.size());
  for (auto& env : transport_->receive(rank)) {
    auto* p = std::get_if<BlockPayload>(&env.message);
    if (!p || p->channels != 9) throw Error("engine: unexpected message in the SSIM halo exchange");
    auto& slot = sc.slots[p->slot];
    const TileGrid& grid = part.grids[p->slot];
    std::size_t k = 0;
    for (int t : p->tiles) {
      const PixelRect r = grid.block_rect(t);
      for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) {
          for (int c = 0; c < 3; ++c) {
            const std::size_t i = slot.rendered.index(x, y, c);
            slot.maps.d_mu[i] = p->values[k++];
            slot.maps.d_xx[i] = p->values[k++];
            slot.maps.d_xy[i] = p->values[k++];
          }
        }
      }
    }
  }
  const auto& ls = config_.pipeline.loss;
  const auto weights = ls.ssim.weights();
  for (int s = 0; s < b; ++s) {
    auto& slot = sc.slots[s];
    const Image& target = targets_[cams[s]];
    const TileGrid& grid = part.grids[s];
    const double inv_count = 1.0 / static_cast<double>(target.data.size());
    std::vector<TilePartial> partials;
    for (int t : slot.owned) {
      const auto start = Clock::now();
      if (slot.ssim) {
        ssim_backward_block(slot.maps, slot.rendered, target, grid, t, ls.ssim, weights, -ls.lambda_ssim * inv_count,
                            slot.grad);
      }
      render_tile_backward(slot.zbuf, slot.received, t, slot.grad, slot.aux, config_.pipeline.render, partials);
      if (!config_.deterministic_cost) slot.block_cost[t] += nanos_since(start);
    }
    std::vector<GradPayload> out(config_.workers);
    for (const auto& p : partials) {
      auto& dst = out[slot.recv_source[p.index]];
      dst.index.push_back(slot.recv_index[p.index]);
      dst.grad.insert(dst.grad.end(), p.grad.begin(), p.grad.end());
    }
    for (int d = 0; d < config_.workers; ++d) {
      if (out[d].index.empty()) continue;
      out[d].slot = s;
      transport_->send(rank, d, std::move(out[d]));
    }
  }
}

// Phase 5: reduce partials in source-rank order, transform backward, Adam.
void Engine::phase_update(int rank, const PixelPartition& /*part*/, std::span<const int> cams) {
  Scratch& sc = scratch_[rank];
  Shard& shard = shards_[rank];
  const int b = static_cast<int>(cams.size());
  for (auto& slot : sc.slots) slot.local_grad = ProjectedGrads(slot.local.size());
  for (auto& env : transport_->receive(rank)) {
    auto* p = std::get_if<GradPayload>(&env.message);
    if (!p || p->grad.size() != p->index.size() * kProjGradWidth) {
      throw Error("engine: gradient payload does not match its plan");
    }
    auto& grads = sc.slots[p->slot].local_grad;
    for (std::size_t k = 0; k < p->index.size(); ++k) {
      if (p->index[k] >= grads.size()) throw Error("engine: gradient payload does not match its plan");
      auto row = grads.row(p->index[k]);
      for (int j = 0; j < kProjGradWidth; ++j) row[j] += p->grad[k * kProjGradWidth + j];
    }
  }
  sc.grad = GaussianCloud(shard.size());
  for (int s = 0; s < b; ++s) {
    auto& slot = sc.slots[s];
    const CameraView& cam = cameras_[cams[s]];
    const GaussianCloud g = transform_backward(slot.local_grad, shard.cloud, cam, slot.local, config_.pipeline.projection);
    for (int k = 0; k < kNumGroups; ++k) {
      for (std::size_t j = 0; j < g.groups[k].size(); ++j) sc.grad.groups[k][j] += g.groups[k][j];
    }
    accumulate_view_stats(shard.stats, slot.local_grad, slot.local, cam.width, cam.height);
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  for (auto& group : sc.grad.groups) {
    for (double& x : group) x *= inv_b;
  }
  HyperParams h = config_.hyper;
  h.batch_size = b;
  adam_step(shard.cloud, sc.grad, shard.adam, scale_hyperparams(h, images_seen_));
  if (config_.float32) round_to_float32(shard.cloud);
}

bool Engine::densify_and_rebalance(std::int64_t before, std::int64_t after) {
  if (!config_.densify) return false;
  const DensifyConfig& dc = config_.densify_config;
  bool densified = false;
  if (densify_due(dc, before, after)) {
    std::vector<DensifyPlan> plans;
    long long growth = 0;
    std::size_t total = 0;
    for (const auto& s : shards_) {
      plans.push_back(plan_densify(s, dc, extent_));
      growth += plans.back().growth();
      total += s.size();
    }
    if (dc.max_gaussians > 0 && static_cast<long long>(total) + growth > static_cast<long long>(dc.max_gaussians)) {
      if (!budget_warned_) {
        log_warning("Gaussian budget of " + std::to_string(dc.max_gaussians) +
                    " would be exceeded; skipping growth (reported once per run)");
        budget_warned_ = true;
      }
      for (auto& p : plans) p.drop_growth();
    }
    std::vector<DensifyRequest> requests;
    for (std::size_t r = 0; r < shards_.size(); ++r) {
      auto req = densify_requests(shards_[r], plans[r]);
      requests.insert(requests.end(), req.begin(), req.end());
    }
    const auto first = allocate_child_ids(requests, next_id_);
    std::unordered_map<std::uint64_t, std::uint64_t> by_parent;
    for (std::size_t k = 0; k < requests.size(); ++k) by_parent[requests[k].parent_id] = first[k];
    const auto event = static_cast<std::uint64_t>(after);
    for (std::size_t r = 0; r < shards_.size(); ++r) {
      Shard& s = shards_[r];
      std::vector<std::uint64_t> first_child(s.size(), 0);
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (auto it = by_parent.find(s.ids[i]); it != by_parent.end()) first_child[i] = it->second;
      }
      apply_densify(s, plans[r], first_child, dc, config_.seed, event);
      s.sort_by_id();
    }
    densified = true;
  }
  if (opacity_reset_due(dc, before, after)) {
    for (auto& s : shards_) opacity_reset(s.cloud, s.adam, dc.opacity_reset_value);
  }
  if (densified && config_.rebalance_gaussians) {
    shards_ = rebalance_gaussians(shards_, config_.workers, config_.seed ^ splitmix64(static_cast<std::uint64_t>(after)));
  }
  return densified;
}

Shard merge_shards(const std::vector<Shard>& shards) {
  Shard all;
  for (const auto& s : shards) {
    s.check_aligned();
    for (std::size_t i = 0; i < s.size(); ++i) all.append_from(s, i);
  }
  if (!shards.empty()) all.adam.step = shards.front().adam.step;
  all.sort_by_id();
  return all;
}

std::vector<Shard> shard_gaussians(const Shard& all, int workers, std::uint64_t seed) {
  all.check_aligned();
  const auto assign = shard_assignment(all.size(), workers, seed);
  std::vector<Shard> out(workers);
  for (auto& s : out) s.adam.step = all.adam.step;
  // Appending in id order keeps every shard sorted.
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return all.ids[a] < all.ids[b]; });
  for (auto i : order) out[assign[i]].append_from(all, i);
  return out;
}

std::vector<Shard> rebalance_gaussians(const std::vector<Shard>& shards, int workers, std::uint64_t seed) {
  return shard_gaussians(merge_shards(shards), workers, seed);
}

ViewStream::ViewStream(std::vector<int> indices, std::uint64_t seed) : indices_(std::move(indices)), seed_(seed) {
  if (indices_.empty()) throw Error("no training views");
  refill();
}

void ViewStream::refill() {
  order_ = indices_;
  KeyedRng rng(seed_, 0x5EEDULL, epoch_++);
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
  pos_ = 0;
}

std::vector<int> ViewStream::next(int count) {
  std::vector<int> out;
  for (int k = 0; k < count; ++k) {
    if (pos_ == order_.size()) refill();
    out.push_back(order_[pos_++]);
  }
  return out;
}

void write_metrics_header(std::ostream& out, int workers) {
  out << "iteration,images_seen,loss";
  for (int g = 0; g < workers; ++g) out << ",cost_w" << g;
  out << ",exchange_volume,dense_bound,imbalance,gaussians\n";
}

void write_metrics_row(std::ostream& out, const StepMetrics& m) {
  out << m.iteration << ',' << m.images_seen << ',' << m.loss;
  for (double c : m.worker_cost) out << ',' << c;
  out << ',' << m.exchange_volume << ',' << m.dense_bound << ',' << m.imbalance << ',' << m.gaussians << '\n';
}

}  // namespace grendel
