#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "grendel/engine.hpp"
#include "grendel/scene_io.hpp"

namespace grendel {

/// Per-view gradients of one parameter group, flattened.
class GradientSource {
 public:
  virtual ~GradientSource() = default;
  virtual int views() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<double> gradient(int view) = 0;
  /// Correlated views share a group; one group by default.
  virtual int group(int /*view*/) const { return 0; }
};

/// Independent zero-mean Gaussian gradients with standard deviation `sigma`,
/// keyed by (seed, view).
class IidGradientSource final : public GradientSource {
 public:
  IidGradientSource(int views, std::size_t dimension, double sigma, std::uint64_t seed);
  int views() const override { return views_; }
  std::size_t dimension() const override { return dimension_; }
  std::vector<double> gradient(int view) override;

 private:
  int views_;
  std::size_t dimension_;
  double sigma_;
  std::uint64_t seed_;
};

/// View v shares the gradient of cluster v % clusters (std-dev
/// `sigma_shared`) plus its own noise (std-dev `sigma_view`). Batches drawn
/// within one cluster have a batch-mean variance of about
/// sigma_shared^2 + sigma_view^2 / b, so 1/Var grows linearly and then levels
/// off.
class ClusteredGradientSource final : public GradientSource {
 public:
  ClusteredGradientSource(int views, int clusters, std::size_t dimension, double sigma_shared, double sigma_view,
                          std::uint64_t seed);
  int views() const override { return views_; }
  std::size_t dimension() const override { return dimension_; }
  std::vector<double> gradient(int view) override;
  int group(int view) const override { return view % clusters_; }

 private:
  int views_;
  int clusters_;
  std::size_t dimension_;
  double sigma_shared_;
  double sigma_view_;
  std::uint64_t seed_;
};

/// Gradients of the training loss of a fixed cloud, one per camera. Results
/// are cached.
class SceneGradientSource final : public GradientSource {
 public:
  SceneGradientSource(GaussianCloud cloud, std::vector<CameraView> cameras, std::vector<Image> targets, Group group,
                      PipelineSettings settings = {});
  int views() const override { return static_cast<int>(cameras_.size()); }
  std::size_t dimension() const override { return cloud_.data(group_).size(); }
  std::vector<double> gradient(int view) override;

 private:
  GaussianCloud cloud_;
  std::vector<CameraView> cameras_;
  std::vector<Image> targets_;
  Group group_;
  PipelineSettings settings_;
  std::vector<std::vector<double>> cache_;
};

enum class BatchSampling {
  Distinct,   // b different views
  Duplicate,  // one view repeated b times (fully correlated limit)
  Grouped,    // b distinct views from the group of a random anchor view
};

struct VarianceRow {
  int batch_size = 0;
  double variance = 0.0;  // mean over parameters of the across-trial variance
  double inverse = 0.0;
};

/// For each b, `trials` random batches; the variance of the batch-mean
/// gradient across trials (unbiased), averaged over parameters.
std::vector<VarianceRow> grad_variance_sweep(GradientSource& source, std::span<const int> batch_sizes, int trials,
                                             BatchSampling sampling, std::uint64_t seed);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};
LinearFit fit_line(std::span<const double> x, std::span<const double> y);

void write_variance_csv(std::ostream& out, const std::vector<VarianceRow>& rows);

struct TrajectoryVariant {
  LrRule lr_rule = LrRule::Sqrt;
  MomentumRule momentum_rule = MomentumRule::Exponential;
  int batch_size = 1;
};

struct TrajectoryConfig {
  std::vector<int> batch_sizes{4, 16};
  std::int64_t horizon_images = 256;
  std::int64_t log_every_images = 64;
  Group group = Group::ShDc;
  std::uint64_t seed = 0;
  EngineConfig engine;  // workers, hyper-parameters and pipeline settings
};

struct TrajectoryRow {
  TrajectoryVariant variant;
  std::int64_t images = 0;
  double cosine = 0.0;      // cumulative update vs the b=1 baseline
  double norm_ratio = 0.0;  // |update| / |baseline update|
};

/// The checkpoint's parameters with fresh optimizer state are trained with
/// b = 1 and with every (lr rule, momentum rule, b) variant on the same view
/// stream; cumulative updates of `group` are compared at every log point.
std::vector<TrajectoryRow> trajectory_compare(const Checkpoint& checkpoint, const std::vector<CameraView>& cameras,
                                              const std::vector<Image>& targets, const std::vector<int>& train_indices,
                                              double extent, const TrajectoryConfig& config);

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows);

struct LoadBalanceConfig {
  SyntheticSpec scene;
  int workers = 4;
  int batch_size = 1;
  int epochs = 3;
  std::uint64_t seed = 0;

  LoadBalanceConfig();
};

struct LoadBalanceRow {
  bool rebalance = false;
  std::int64_t iteration = 0;
  double imbalance = 1.0;
};

struct LoadBalanceResult {
  std::vector<LoadBalanceRow> rows;
  double steady_rebalanced = 0.0;  // mean imbalance over the final epoch
  double steady_static = 0.0;
};

/// Trains the skewed scene in deterministic-cost mode with pixel rebalancing
/// on and off.
LoadBalanceResult loadbalance_bench(const LoadBalanceConfig& config);

void write_loadbalance_csv(std::ostream& out, const LoadBalanceResult& result);

}  // namespace grendel
