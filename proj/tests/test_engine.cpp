#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "grendel/engine.hpp"
#include "grendel/error.hpp"
#include "oracles.hpp"

using namespace grendel;

namespace {

SyntheticScene small_scene(std::uint64_t seed = 3, double skew = 0.0) {
  SyntheticSpec s;
  s.count = 40;
  s.views = 8;
  s.width = 32;
  s.height = 32;
  s.skew = skew;
  s.seed = seed;
  return generate_synthetic_scene(s);
}

EngineConfig base_config(int workers, int batch) {
  EngineConfig c;
  c.workers = workers;
  c.batch_size = batch;
  c.densify = false;
  c.threads = 1;
  c.seed = 11;
  return c;
}

// Starting cloud: the truth with every parameter nudged so there is
// something to fit.
GaussianCloud perturbed(const GaussianCloud& truth, std::uint64_t seed) {
  GaussianCloud c = truth;
  KeyedRng rng(seed);
  for (double& x : c.data(Group::Position)) x += 0.03 * rng.normal();
  for (double& x : c.data(Group::ShDc)) x += 0.2 * rng.normal();
  for (double& x : c.data(Group::OpacityLogit)) x += 0.3 * rng.normal();
  return c;
}

std::vector<std::vector<int>> batches(int steps, int b, int views, std::uint64_t seed) {
  ViewStream vs([&] {
    std::vector<int> v(views);
    for (int i = 0; i < views; ++i) v[i] = i;
    return v;
  }(), seed);
  std::vector<std::vector<int>> out;
  for (int k = 0; k < steps; ++k) out.push_back(vs.next(b));
  return out;
}

double max_rel_diff(const GaussianCloud& a, const GaussianCloud& b) {
  REQUIRE(a.count() == b.count());
  double worst = 0.0;
  for (int g = 0; g < kNumGroups; ++g) {
    for (std::size_t k = 0; k < a.groups[g].size(); ++k) {
      const double x = a.groups[g][k], y = b.groups[g][k];
      worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1e-12}));
    }
  }
  return worst;
}

Checkpoint run(const SyntheticScene& sc, EngineConfig cfg, int steps, std::uint64_t batch_seed,
               std::vector<StepMetrics>* metrics = nullptr) {
  Engine e(cfg, sc.cameras, sc.images, 1.0);
  e.initialize(perturbed(sc.truth, 5));
  for (const auto& batch : batches(steps, cfg.batch_size, static_cast<int>(sc.cameras.size()), batch_seed)) {
    StepMetrics m = e.train_step(batch);
    if (metrics) metrics->push_back(std::move(m));
  }
  return e.checkpoint();
}

}  // namespace

TEST_CASE("one worker reproduces the single-process reference step bit for bit") {
  const SyntheticScene sc = small_scene();
  for (int b : {1, 3}) {
    EngineConfig cfg = base_config(1, b);
    Engine e(cfg, sc.cameras, sc.images, 1.0);
    const GaussianCloud start = perturbed(sc.truth, 5);
    e.initialize(start);
    Shard ref = make_shard(start);
    std::int64_t seen = 0;
    for (const auto& batch : batches(6, b, 8, 2)) {
      std::vector<CameraView> views;
      std::vector<Image> targets;
      for (int c : batch) {
        views.push_back(sc.cameras[c]);
        targets.push_back(sc.images[c]);
      }
      const double ref_loss = reference_step(ref, views, targets, cfg.hyper, seen, cfg.pipeline, false);
      seen += b;
      const StepMetrics m = e.train_step(batch);
      CHECK(m.loss == doctest::Approx(ref_loss).epsilon(1e-12));
    }
    CHECK(e.gather() == ref.cloud);
  }
}

TEST_CASE("two and four workers follow the one-worker trajectory") {
  const SyntheticScene sc = small_scene();
  for (int b : {1, 2}) {
    const Checkpoint one = run(sc, base_config(1, b), 12, 4);
    for (int g : {2, 4}) {
      const Checkpoint many = run(sc, base_config(g, b), 12, 4);
      CHECK(many.ids == one.ids);
      CHECK(max_rel_diff(many.cloud, one.cloud) <= 1e-10);
    }
  }
}

TEST_CASE("equivalence holds through densification and redistribution") {
  const SyntheticScene sc = small_scene(8);
  auto cfg = [](int g) {
    EngineConfig c = base_config(g, 2);
    c.densify = true;
    c.densify_config.start_images = 4;
    c.densify_config.interval_images = 6;
    c.densify_config.grad_threshold = 2e-5;
    c.densify_config.min_opacity = 0.2;
    c.densify_config.opacity_reset_images = 16;
    return c;
  };
  std::vector<StepMetrics> m1;
  const Checkpoint one = run(sc, cfg(1), 10, 6, &m1);
  CHECK(std::any_of(m1.begin(), m1.end(), [](const StepMetrics& m) { return m.densified; }));
  CHECK(one.cloud.count() != 40);
  for (int g : {2, 4}) {
    const Checkpoint many = run(sc, cfg(g), 10, 6);
    CHECK(many.ids == one.ids);
    CHECK(many.next_id == one.next_id);
    CHECK(max_rel_diff(many.cloud, one.cloud) <= 1e-10);
  }
}

TEST_CASE("exchange volume matches an ownership scan and nothing is delivered in vain") {
  const SyntheticScene sc = small_scene(2);
  EngineConfig cfg = base_config(4, 2);
  cfg.deterministic_cost = true;
  Engine e(cfg, sc.cameras, sc.images, 1.0);
  e.initialize(perturbed(sc.truth, 1));
  for (const auto& batch : batches(8, 2, 8, 9)) {
    const GaussianCloud before = e.gather();
    const StepMetrics m = e.train_step(batch);
    std::vector<TileGrid> grids;
    for (int c : batch) grids.push_back(TileGrid::for_image(sc.cameras[c].width, sc.cameras[c].height));
    const PixelPartition part(grids, m.division_points);
    std::uint64_t expect = 0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const ProjectedShard p = transform_gaussians(before, {}, sc.cameras[batch[s]], cfg.pipeline.projection);
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (!p.visible[i]) continue;
        std::set<int> owners;
        for (int t : oracle::brute_footprint_tiles(grids[s], p.mean2d[2 * i], p.mean2d[2 * i + 1], p.radius[i])) {
          owners.insert(part.owner(part.offsets[s] + t));
        }
        expect += owners.size();
      }
    }
    CHECK(m.exchange_volume == expect);
    CHECK(m.false_deliveries == 0);
    CHECK(m.dense_bound == 4u * before.count() * 2u);
    CHECK(m.exchange_volume <= m.dense_bound);
  }
}

TEST_CASE("deterministic-cost partitions respect the load bound of their estimates") {
  const SyntheticScene sc = small_scene(4);
  EngineConfig cfg = base_config(2, 4);
  cfg.deterministic_cost = true;
  Engine e(cfg, sc.cameras, sc.images, 1.0);
  e.initialize(perturbed(sc.truth, 2));
  for (const auto& batch : batches(8, 4, 8, 1)) {
    // Estimates as the engine sees them before the step.
    std::vector<double> et;
    bool all_seen = true;
    for (int c : batch) {
      all_seen = all_seen && e.history().has(sc.cameras[c].id);
      const auto est = e.history().estimate(sc.cameras[c].id, TileGrid::for_image(32, 32).count());
      et.insert(et.end(), est.begin(), est.end());
    }
    const StepMetrics m = e.train_step(batch);
    if (!all_seen) continue;
    CHECK(m.division_points == oracle::linear_scan_division_points(et, 2));
    double total = 0, mx = 0;
    for (double v : et) {
      total += v;
      mx = std::max(mx, v);
    }
    for (double load : partition_loads(et, m.division_points)) CHECK(load <= total / 2 + mx);
  }
}

TEST_CASE("engine runs are deterministic under a seed") {
  const SyntheticScene sc = small_scene();
  EngineConfig cfg = base_config(3, 2);
  cfg.deterministic_cost = true;
  std::vector<StepMetrics> a, b;
  const Checkpoint x = run(sc, cfg, 5, 3, &a);
  const Checkpoint y = run(sc, cfg, 5, 3, &b);
  CHECK(x.cloud == y.cloud);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].worker_cost == b[k].worker_cost);
    CHECK(a[k].division_points == b[k].division_points);
  }
}

TEST_CASE("float32 mode stores single-precision values") {
  const SyntheticScene sc = small_scene();
  EngineConfig cfg = base_config(2, 1);
  cfg.float32 = true;
  const Checkpoint ck = run(sc, cfg, 2, 1);
  for (int g = 0; g < kNumGroups; ++g) {
    for (double x : ck.cloud.groups[g]) CHECK(x == static_cast<double>(static_cast<float>(x)));
  }
}

TEST_CASE("checkpoint and restore continue the same trajectory") {
  const SyntheticScene sc = small_scene();
  const EngineConfig cfg = base_config(2, 2);
  const auto bs = batches(6, 2, 8, 7);
  Engine a(cfg, sc.cameras, sc.images, 1.0);
  a.initialize(perturbed(sc.truth, 5));
  for (int k = 0; k < 3; ++k) a.train_step(bs[k]);
  Engine b(cfg, sc.cameras, sc.images, 1.0);
  b.restore(a.checkpoint());
  CHECK(b.images_seen() == 6);
  for (int k = 3; k < 6; ++k) {
    a.train_step(bs[k]);
    b.train_step(bs[k]);
  }
  CHECK(a.gather() == b.gather());
}

TEST_CASE("engine input errors") {
  const SyntheticScene sc = small_scene();
  CHECK_THROWS_AS(Engine(base_config(0, 1), sc.cameras, sc.images, 1.0), Error);
  std::vector<Image> wrong = sc.images;
  wrong[2] = Image(8, 8);
  CHECK_THROWS_AS(Engine(base_config(1, 1), sc.cameras, wrong, 1.0), Error);
  Engine e(base_config(1, 1), sc.cameras, sc.images, 1.0);
  const std::vector<int> batch{0};
  CHECK_THROWS_WITH_AS(e.train_step(batch), doctest::Contains("not initialized"), Error);
  e.initialize(sc.truth);
  const std::vector<int> bad{99};
  CHECK_THROWS_AS(e.train_step(bad), Error);
}

TEST_CASE("shards split evenly and redistribution keeps every Gaussian once") {
  Shard all = make_shard(oracle::random_cloud(10, 1));
  const auto four = shard_gaussians(all, 4, 3);
  std::vector<std::size_t> sizes;
  for (const auto& s : four) sizes.push_back(s.size());
  std::sort(sizes.rbegin(), sizes.rend());
  CHECK(sizes == std::vector<std::size_t>{3, 3, 2, 2});

  std::vector<Shard> lopsided = shard_gaussians(make_shard(oracle::random_cloud(12, 2)), 1, 0);
  // {10, 2} split of 12 Gaussians.
  Shard first, second;
  for (std::size_t i = 0; i < 12; ++i) (i < 10 ? first : second).append_from(lopsided[0], i);
  const auto even = rebalance_gaussians({first, second}, 2, 9);
  CHECK(even[0].size() == 6);
  CHECK(even[1].size() == 6);
  std::multiset<std::uint64_t> ids;
  for (const auto& s : even) {
    CHECK(std::is_sorted(s.ids.begin(), s.ids.end()));
    ids.insert(s.ids.begin(), s.ids.end());
  }
  std::multiset<std::uint64_t> expect;
  for (std::uint64_t i = 0; i < 12; ++i) expect.insert(i);
  CHECK(ids == expect);
  CHECK(merge_shards(even).cloud == lopsided[0].cloud);
}

TEST_CASE("transport delivers after the barrier in source order") {
  InProcessTransport t(3);
  auto payload = [](int slot) {
    GradPayload p;
    p.slot = slot;
    return Message{p};
  };
  t.send(2, 0, payload(1));
  t.send(1, 0, payload(2));
  t.send(2, 0, payload(3));
  t.send(0, 0, payload(4));
  CHECK(t.receive(0).empty());
  t.barrier();
  const auto got = t.receive(0);
  REQUIRE(got.size() == 4);
  std::vector<std::pair<int, int>> order;
  for (const auto& e : got) order.emplace_back(e.source, std::get<GradPayload>(e.message).slot);
  CHECK(order == std::vector<std::pair<int, int>>{{0, 4}, {1, 2}, {2, 1}, {2, 3}});
  CHECK(t.receive(0).empty());
  CHECK(t.generation() == 1);
  CHECK_THROWS_AS(t.send(0, 3, payload(0)), Error);
  t.close();
  CHECK_THROWS_WITH_AS(t.send(0, 1, payload(0)), doctest::Contains("closed"), Error);
}

TEST_CASE("run_ranks runs every rank and rethrows the lowest failure") {
  for (int threads : {1, 3}) {
    std::atomic<int> ran{0};
    CHECK_THROWS_WITH(run_ranks(5, threads,
                                [&](int r) {
                                  ++ran;
                                  if (r == 3 || r == 1) throw std::runtime_error("rank " + std::to_string(r));
                                }),
                      "rank 1");
    CHECK(ran == 5);
  }
}

TEST_CASE("view stream visits every view once per epoch") {
  ViewStream a({0, 1, 2, 3, 4}, 7), b({0, 1, 2, 3, 4}, 7);
  const auto first = a.next(5);
  CHECK(first == b.next(5));
  CHECK(std::set<int>(first.begin(), first.end()).size() == 5);
  const auto next = a.next(5);
  CHECK(std::set<int>(next.begin(), next.end()).size() == 5);
  CHECK(ViewStream({0, 1, 2, 3, 4}, 8).next(5) != first);
  CHECK_THROWS_AS(ViewStream({}, 1), Error);
}

TEST_CASE("the Gaussian budget stops growth with a single warning") {
  const SyntheticScene sc = small_scene(8);
  EngineConfig c = base_config(2, 2);
  c.densify = true;
  c.densify_config.start_images = 2;
  c.densify_config.interval_images = 2;
  c.densify_config.grad_threshold = 1e-9;
  c.densify_config.max_gaussians = 45;
  std::ostringstream buf;
  auto* old = std::cerr.rdbuf(buf.rdbuf());
  const Checkpoint ck = run(sc, c, 8, 1);
  std::cerr.rdbuf(old);
  CHECK(ck.cloud.count() <= 45u);
  const std::string log = buf.str();
  const auto first = log.find("budget of 45");
  CHECK(first != std::string::npos);
  CHECK(log.find("budget of 45", first + 1) == std::string::npos);
}

TEST_CASE("optimizer state resets on a batch-size change only when asked") {
  const SyntheticScene sc = small_scene();
  for (bool reset : {false, true}) {
    EngineConfig c = base_config(2, 2);
    c.hyper.reset_on_batch_change = reset;
    Engine e(c, sc.cameras, sc.images, 1.0);
    e.initialize(perturbed(sc.truth, 5));
    const std::vector<int> two{0, 1}, one{2};
    e.train_step(two);
    e.train_step(two);
    e.train_step(one);
    for (const auto& s : e.shards()) CHECK(s.adam.step[0] == (reset ? 1 : 3));
  }
}
