#include "grendel/experiments.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "grendel/error.hpp"
#include "grendel/rng.hpp"

namespace grendel {

IidGradientSource::IidGradientSource(int views, std::size_t dimension, double sigma, std::uint64_t seed)
    : views_(views), dimension_(dimension), sigma_(sigma), seed_(seed) {
  if (views < 1 || dimension < 1) throw Error("gradient source needs at least one view and one parameter");
}

std::vector<double> IidGradientSource::gradient(int view) {
  KeyedRng rng(seed_, 0x11DULL, static_cast<std::uint64_t>(view));
  std::vector<double> g(dimension_);
  for (double& x : g) x = sigma_ * rng.normal();
  return g;
}

ClusteredGradientSource::ClusteredGradientSource(int views, int clusters, std::size_t dimension, double sigma_shared,
                                                 double sigma_view, std::uint64_t seed)
    : views_(views),
      clusters_(clusters),
      dimension_(dimension),
      sigma_shared_(sigma_shared),
      sigma_view_(sigma_view),
      seed_(seed) {
  if (views < 1 || clusters < 1 || dimension < 1) {
    throw Error("gradient source needs at least one view, cluster and parameter");
  }
}

std::vector<double> ClusteredGradientSource::gradient(int view) {
  KeyedRng shared(seed_, 0xC1ULL, static_cast<std::uint64_t>(view % clusters_));
  KeyedRng own(seed_, 0x11DULL, static_cast<std::uint64_t>(view));
  std::vector<double> g(dimension_);
  for (double& x : g) x = sigma_shared_ * shared.normal() + sigma_view_ * own.normal();
  return g;
}

SceneGradientSource::SceneGradientSource(GaussianCloud cloud, std::vector<CameraView> cameras,
                                         std::vector<Image> targets, Group group, PipelineSettings settings)
    : cloud_(std::move(cloud)),
      cameras_(std::move(cameras)),
      targets_(std::move(targets)),
      group_(group),
      settings_(std::move(settings)),
      cache_(cameras_.size()) {
  if (cameras_.empty() || cameras_.size() != targets_.size()) {
    throw Error("scene gradient source needs one target per camera");
  }
}

std::vector<double> SceneGradientSource::gradient(int view) {
  auto& slot = cache_.at(static_cast<std::size_t>(view));
  if (slot.empty()) {
    ViewPass pass = forward_backward(cloud_, {}, cameras_[view], targets_[view], settings_);
    slot = std::move(pass.grad.data(group_));
  }
  return slot;
}

std::vector<VarianceRow> grad_variance_sweep(GradientSource& source, std::span<const int> batch_sizes, int trials,
                                             BatchSampling sampling, std::uint64_t seed) {
  if (trials < 2) throw Error("variance sweep needs at least 2 trials");
  const int n_views = source.views();
  const std::size_t dim = source.dimension();
  std::vector<VarianceRow> rows;
  for (int b : batch_sizes) {
    if (b < 1) throw Error("batch sizes must be >= 1");
    if (b > n_views) {
      throw Error("batch size " + std::to_string(b) + " exceeds the " + std::to_string(n_views) + " available views");
    }
    std::vector<std::vector<double>> means;
    for (int t = 0; t < trials; ++t) {
      KeyedRng rng(seed, 0xBA7C4ULL, static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(t));
      std::vector<int> views;
      if (sampling == BatchSampling::Duplicate) {
        views.assign(b, static_cast<int>(rng.below(n_views)));
      } else {
        std::vector<int> pool;
        if (sampling == BatchSampling::Grouped) {
          const int g = source.group(static_cast<int>(rng.below(n_views)));
          for (int v = 0; v < n_views; ++v) {
            if (source.group(v) == g) pool.push_back(v);
          }
          if (static_cast<int>(pool.size()) < b) {
            throw Error("batch size " + std::to_string(b) + " exceeds the " + std::to_string(pool.size()) +
                        " views of a group");
          }
        } else {
          pool.resize(n_views);
          std::iota(pool.begin(), pool.end(), 0);
        }
        // Partial Fisher-Yates: b distinct views.
        const int n = static_cast<int>(pool.size());
        for (int k = 0; k < b; ++k) {
          const auto j = k + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - k)));
          std::swap(pool[k], pool[j]);
          views.push_back(pool[k]);
        }
      }
      std::vector<double> mean(dim, 0.0);
      for (int v : views) {
        const auto g = source.gradient(v);
        for (std::size_t k = 0; k < dim; ++k) mean[k] += g[k];
      }
      for (double& x : mean) x /= b;
      means.push_back(std::move(mean));
    }
    double var_sum = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      double mu = 0.0;
      for (const auto& m : means) mu += m[k];
      mu /= trials;
      double ss = 0.0;
      for (const auto& m : means) ss += (m[k] - mu) * (m[k] - mu);
      var_sum += ss / (trials - 1);
    }
    VarianceRow row;
    row.batch_size = b;
    row.variance = var_sum / static_cast<double>(dim);
    row.inverse = row.variance > 0.0 ? 1.0 / row.variance : std::numeric_limits<double>::infinity();
    rows.push_back(row);
  }
  return rows;
}

LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("line fit needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearFit f;
  f.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    sse += r * r;
  }
  f.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  return f;
}

void write_variance_csv(std::ostream& out, const std::vector<VarianceRow>& rows) {
  out << "batch_size,variance,inverse_variance\n";
  for (const auto& r : rows) out << r.batch_size << ',' << r.variance << ',' << r.inverse << '\n';
}

namespace {

// Cumulative update snapshots of one group at every log point.
std::vector<std::vector<double>> run_trajectory(const Checkpoint& start, const std::vector<CameraView>& cameras,
                                                const std::vector<Image>& targets,
                                                const std::vector<int>& train_indices, double extent,
                                                const TrajectoryConfig& config, const TrajectoryVariant& variant) {
  if (config.horizon_images % variant.batch_size != 0 || config.log_every_images % variant.batch_size != 0) {
    throw Error("trajectory horizon and log interval must be multiples of every batch size");
  }
  EngineConfig ec = config.engine;
  ec.batch_size = variant.batch_size;
  ec.hyper.lr_rule = variant.lr_rule;
  ec.hyper.momentum_rule = variant.momentum_rule;
  ec.densify = false;
  ec.seed = config.seed;
  Engine engine(ec, cameras, targets, extent);
  engine.restore(start);
  ViewStream stream(train_indices, config.seed);
  const std::vector<double> initial = start.cloud.data(config.group);
  std::vector<std::vector<double>> snaps;
  for (std::int64_t seen = 0; seen < config.horizon_images;) {
    const auto batch = stream.next(variant.batch_size);
    engine.train_step(batch);
    seen += variant.batch_size;
    if (seen % config.log_every_images == 0) {
      auto now = engine.gather().data(config.group);
      for (std::size_t k = 0; k < now.size(); ++k) now[k] -= initial[k];
      snaps.push_back(std::move(now));
    }
  }
  return snaps;
}

}  // namespace

std::vector<TrajectoryRow> trajectory_compare(const Checkpoint& checkpoint, const std::vector<CameraView>& cameras,
                                              const std::vector<Image>& targets, const std::vector<int>& train_indices,
                                              double extent, const TrajectoryConfig& config) {
  if (config.log_every_images < 1 || config.horizon_images < config.log_every_images) {
    throw Error("trajectory needs 1 <= log interval <= horizon");
  }
  // Fresh optimizer state, rows in id order so snapshots line up with gather().
  Shard sorted;
  sorted.ids = checkpoint.ids;
  sorted.cloud = checkpoint.cloud;
  sorted.adam = AdamState(checkpoint.cloud.count());
  sorted.stats.resize(checkpoint.cloud.count());
  sorted.sort_by_id();
  Checkpoint start = checkpoint;
  start.ids = sorted.ids;
  start.cloud = sorted.cloud;
  start.adam = sorted.adam;
  start.images_seen = 0;
  start.iteration = 0;

  const auto base = run_trajectory(start, cameras, targets, train_indices, extent, config, {});
  std::vector<TrajectoryRow> rows;
  auto compare = [&](const TrajectoryVariant& v, const std::vector<std::vector<double>>& snaps) {
    for (std::size_t k = 0; k < snaps.size(); ++k) {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t j = 0; j < snaps[k].size(); ++j) {
        dot += snaps[k][j] * base[k][j];
        na += snaps[k][j] * snaps[k][j];
        nb += base[k][j] * base[k][j];
      }
      TrajectoryRow r;
      r.variant = v;
      r.images = static_cast<std::int64_t>(k + 1) * config.log_every_images;
      r.cosine = (na > 0.0 && nb > 0.0) ? dot / std::sqrt(na * nb) : 0.0;
      r.norm_ratio = nb > 0.0 ? std::sqrt(na / nb) : 0.0;
      rows.push_back(r);
    }
  };
  compare({LrRule::Constant, MomentumRule::Unscaled, 1}, base);
  for (int b : config.batch_sizes) {
    for (auto lr : {LrRule::Constant, LrRule::Sqrt, LrRule::Linear}) {
      for (auto mom : {MomentumRule::Exponential, MomentumRule::Unscaled}) {
        const TrajectoryVariant v{lr, mom, b};
        compare(v, run_trajectory(start, cameras, targets, train_indices, extent, config, v));
      }
    }
  }
  return rows;
}

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows) {
  out << "lr_rule,momentum_rule,batch_size,images,cosine,norm_ratio\n";
  for (const auto& r : rows) {
    out << to_string(r.variant.lr_rule) << ',' << to_string(r.variant.momentum_rule) << ',' << r.variant.batch_size
        << ',' << r.images << ',' << r.cosine << ',' << r.norm_ratio << '\n';
  }
}

LoadBalanceConfig::LoadBalanceConfig() {
  scene.count = 400;
  scene.views = 8;
  scene.width = 128;
  scene.height = 128;
  scene.skew = 0.9;
}

LoadBalanceResult loadbalance_bench(const LoadBalanceConfig& config) {
  SyntheticSpec spec = config.scene;
  spec.seed = config.seed;
  const SyntheticScene scene = generate_synthetic_scene(spec);
  std::vector<int> all(scene.cameras.size());
  std::iota(all.begin(), all.end(), 0);
  const int steps_per_epoch = static_cast<int>((all.size() + config.batch_size - 1) / config.batch_size);

  LoadBalanceResult result;
  for (bool rebalance : {true, false}) {
    EngineConfig ec;
    ec.workers = config.workers;
    ec.batch_size = config.batch_size;
    ec.deterministic_cost = true;
    ec.rebalance_pixels = rebalance;
    ec.densify = false;
    ec.seed = config.seed;
    ec.hyper.spatial_scale = scene_extent(scene.cameras);
    Engine engine(ec, scene.cameras, scene.images, ec.hyper.spatial_scale);
    engine.initialize(init_from_points(scene.init_points));
    ViewStream stream(all, config.seed);
    double steady = 0.0;
    int steady_steps = 0;
    for (int e = 0; e < config.epochs; ++e) {
      for (int s = 0; s < steps_per_epoch; ++s) {
        const StepMetrics m = engine.train_step(stream.next(config.batch_size));
        result.rows.push_back({rebalance, m.iteration, m.imbalance});
        if (e == config.epochs - 1) {
          steady += m.imbalance;
          ++steady_steps;
        }
      }
    }
    (rebalance ? result.steady_rebalanced : result.steady_static) = steady_steps ? steady / steady_steps : 1.0;
  }
  return result;
}

void write_loadbalance_csv(std::ostream& out, const LoadBalanceResult& result) {
  out << "rebalance,iteration,imbalance\n";
  for (const auto& r : result.rows) out << (r.rebalance ? 1 : 0) << ',' << r.iteration << ',' << r.imbalance << '\n';
}

}  // namespace grendel
