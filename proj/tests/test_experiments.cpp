#include <doctest.h>

#include <cmath>
#include <sstream>

#include "grendel/error.hpp"
#include "grendel/experiments.hpp"

using namespace grendel;

namespace {

// Expected variance of the batch mean of b distinct draws from a finite
// population, averaged over parameters.
double finite_population_variance(GradientSource& src, int b) {
  const int n = src.views();
  std::vector<double> sum(src.dimension(), 0.0), sq(src.dimension(), 0.0);
  for (int v = 0; v < n; ++v) {
    const auto g = src.gradient(v);
    for (std::size_t k = 0; k < g.size(); ++k) {
      sum[k] += g[k];
      sq[k] += g[k] * g[k];
    }
  }
  double total = 0.0;
  for (std::size_t k = 0; k < sum.size(); ++k) {
    const double pop = sq[k] / n - (sum[k] / n) * (sum[k] / n);
    total += pop / b * (n - b) / (n - 1.0);
  }
  return total / static_cast<double>(sum.size());
}

}  // namespace

TEST_CASE("i.i.d. gradients: variance of the batch mean is sigma^2/b") {
  IidGradientSource src(512, 1000, 2.0, 3);
  const std::vector<int> bs{1, 2, 4, 8, 16, 32};
  const int trials = 32;
  const auto rows = grad_variance_sweep(src, bs, trials, BatchSampling::Distinct, 9);
  REQUIRE(rows.size() == bs.size());
  std::vector<double> x, y;
  for (const auto& r : rows) {
    const double expect = finite_population_variance(src, r.batch_size);
    // Sample variances of independent parameters, averaged.
    const double se = expect * std::sqrt(2.0 / ((trials - 1) * 1000.0));
    CHECK(std::abs(r.variance - expect) < 3 * se);
    CHECK(r.inverse == doctest::Approx(1.0 / r.variance));
    x.push_back(r.batch_size);
    y.push_back(r.inverse);
  }
  const LinearFit f = fit_line(x, y);
  CHECK(f.r2 >= 0.99);
  CHECK(f.slope == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("duplicated views give a flat curve") {
  IidGradientSource src(512, 1000, 1.0, 4);
  const std::vector<int> bs{1, 2, 4, 8, 16, 32};
  const auto rows = grad_variance_sweep(src, bs, 32, BatchSampling::Duplicate, 2);
  std::vector<double> x, y;
  for (const auto& r : rows) {
    CHECK(r.variance == doctest::Approx(1.0).epsilon(0.1));
    x.push_back(r.batch_size);
    y.push_back(r.inverse);
  }
  CHECK(std::abs(fit_line(x, y).slope) < 0.01);
}

TEST_CASE("variance sweep input checks") {
  IidGradientSource src(4, 3, 1.0, 0);
  const std::vector<int> too_big{8};
  CHECK_THROWS_WITH_AS(grad_variance_sweep(src, too_big, 4, BatchSampling::Distinct, 0), doctest::Contains("exceeds"),
                       Error);
  const std::vector<int> ok{2};
  CHECK_THROWS_AS(grad_variance_sweep(src, ok, 1, BatchSampling::Distinct, 0), Error);
  CHECK(src.gradient(2) == src.gradient(2));
  CHECK(src.gradient(2) != src.gradient(3));
}

TEST_CASE("line fit") {
  const std::vector<double> x{1, 2, 3, 4}, y{3, 5, 7, 9};
  const LinearFit f = fit_line(x, y);
  CHECK(f.slope == doctest::Approx(2.0));
  CHECK(f.intercept == doctest::Approx(1.0));
  CHECK(f.r2 == doctest::Approx(1.0));
  const std::vector<double> noisy{3, 6, 6, 9};
  const LinearFit g = fit_line(x, noisy);
  // Hand computation: sxy = 9, sxx = 5, syy = 18.
  CHECK(g.slope == doctest::Approx(1.8));
  CHECK(g.r2 == doctest::Approx(1.0 - (18 - 1.8 * 9) / 18));
  CHECK_THROWS_AS(fit_line(std::vector<double>{1}, std::vector<double>{1}), Error);
}

TEST_CASE("scene gradients equal one forward-backward pass") {
  SyntheticSpec spec;
  spec.count = 20;
  spec.views = 3;
  spec.width = spec.height = 24;
  const SyntheticScene sc = generate_synthetic_scene(spec);
  GaussianCloud c = sc.truth;
  for (double& v : c.data(Group::ShDc)) v += 0.1;
  SceneGradientSource src(c, sc.cameras, sc.images, Group::ShDc);
  CHECK(src.dimension() == 60u);
  const ViewPass pass = forward_backward(c, {}, sc.cameras[1], sc.images[1], {});
  CHECK(src.gradient(1) == pass.grad.data(Group::ShDc));
  CHECK(src.gradient(1) == src.gradient(1));
}

TEST_CASE("at batch size 1 every scaling rule reproduces the baseline") {
  SyntheticSpec spec;
  spec.count = 25;
  spec.views = 4;
  spec.width = spec.height = 32;
  const SyntheticScene sc = generate_synthetic_scene(spec);
  Engine e(EngineConfig{}, sc.cameras, sc.images, 1.0);
  GaussianCloud start = sc.truth;
  for (double& v : start.data(Group::ShDc)) v *= 0.8;
  e.initialize(start);
  TrajectoryConfig tc;
  tc.batch_sizes = {1};
  tc.horizon_images = 8;
  tc.log_every_images = 4;
  tc.engine.workers = 2;
  const auto rows = trajectory_compare(e.checkpoint(), sc.cameras, sc.images, {0, 1, 2, 3}, 1.0, tc);
  CHECK(rows.size() == 2 + 6 * 2);
  for (const auto& r : rows) {
    CHECK(r.cosine == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.norm_ratio == doctest::Approx(1.0).epsilon(1e-12));
  }
  std::ostringstream out;
  write_trajectory_csv(out, rows);
  CHECK(out.str().rfind("lr_rule,momentum_rule,batch_size,images,cosine,norm_ratio\n", 0) == 0);
  tc.batch_sizes = {3};
  CHECK_THROWS_WITH_AS(trajectory_compare(e.checkpoint(), sc.cameras, sc.images, {0, 1, 2, 3}, 1.0, tc),
                       doctest::Contains("multiples"), Error);
}

TEST_CASE("load-balance bench on a small skewed scene") {
  LoadBalanceConfig c;
  c.scene.count = 150;
  c.scene.width = c.scene.height = 64;
  c.scene.views = 4;
  c.epochs = 2;
  const LoadBalanceResult r = loadbalance_bench(c);
  CHECK(r.rows.size() == 2u * 2u * 4u);
  CHECK(r.steady_rebalanced < r.steady_static);
  for (const auto& row : r.rows) CHECK(row.imbalance >= 1.0);
  std::ostringstream out;
  write_loadbalance_csv(out, r);
  CHECK(out.str().rfind("rebalance,iteration,imbalance\n", 0) == 0);
  std::ostringstream v;
  write_variance_csv(v, {{2, 0.5, 2.0}});
  CHECK(v.str() == "batch_size,variance,inverse_variance\n2,0.5,2\n");
}

TEST_CASE("grouped batches of correlated views: linear, then a plateau") {
  const int k = 8, n = 512, m = n / k;
  ClusteredGradientSource src(n, k, 1000, std::sqrt(0.05), 1.0, 5);
  CHECK(src.group(13) == 5);
  // Exact expectation: variance of the cluster means (anchor cluster is
  // uniform) plus the within-cluster finite-population term.
  std::vector<std::vector<double>> g(n);
  for (int v = 0; v < n; ++v) g[v] = src.gradient(v);
  auto expected = [&](int b) {
    double total = 0.0;
    for (std::size_t d = 0; d < 1000; ++d) {
      double between_s = 0.0, between_q = 0.0, within = 0.0;
      for (int c = 0; c < k; ++c) {
        double s = 0.0, q = 0.0;
        for (int v = c; v < n; v += k) {
          s += g[v][d];
          q += g[v][d] * g[v][d];
        }
        const double mean = s / m;
        between_s += mean;
        between_q += mean * mean;
        within += (q / m - mean * mean) / b * (m - b) / (m - 1.0);
      }
      total += between_q / k - (between_s / k) * (between_s / k) + within / k;
    }
    return total / 1000.0;
  };
  const std::vector<int> bs{1, 2, 4, 8, 16, 32};
  const auto rows = grad_variance_sweep(src, bs, 256, BatchSampling::Grouped, 3);
  for (const auto& r : rows) {
    CHECK(r.variance == doctest::Approx(expected(r.batch_size)).epsilon(0.15).scale(0));
  }
  // Near-linear start, well below linear at b = 32.
  CHECK(rows[1].inverse == doctest::Approx(2 * rows[0].inverse).epsilon(0.15).scale(0));
  CHECK(rows.back().inverse < 0.75 * 32 * rows.front().inverse);
  const std::vector<int> too_big{m + 1};
  CHECK_THROWS_WITH_AS(grad_variance_sweep(src, too_big, 4, BatchSampling::Grouped, 0),
                       doctest::Contains("views of a group"), Error);
}
